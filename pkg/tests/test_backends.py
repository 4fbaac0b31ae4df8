from __future__ import annotations

import random
import time

import pytest

from tasklab.backends import LocalBackend, TesBackend, tes_serialize
from tasklab.backends.base import (
    BackendJobSpec,
    SubmissionRejected,
    TERMINAL_JOB_STATES,
    UnknownHandle,
    job_state_to_status,
)
from tasklab.backends.mock_tes import MockTesServer
from tasklab.domain import ExecutionStatus, Executor, MountPoint, Resources, Volume

from conftest import make_task


def wait_terminal(backend, handle, timeout=10.0):
    deadline = time.monotonic() + timeout
    while time.monotonic() < deadline:
        job = backend.poll(handle)
        if job.state in TERMINAL_JOB_STATES:
            return job
        time.sleep(0.02)
    raise AssertionError(f"job {handle} did not finish: {backend.poll(handle).state}")


def spec(*executors: Executor, volumes=(), **kwargs) -> BackendJobSpec:
    return BackendJobSpec(executors=tuple(executors), volumes=tuple(volumes), **kwargs)


@pytest.fixture
def backend(tmp_path) -> LocalBackend:
    b = LocalBackend(root=tmp_path / "jobs", max_workers=4)
    yield b
    b.shutdown()


class TestLocalBackend:
    def test_echo_completes_with_stdout(self, backend):
        handle = backend.submit(spec(Executor(image="alpine", command=("echo", "hi"))))
        job = wait_terminal(backend, handle)
        assert job.state == "COMPLETE"
        assert job.stdout == ["hi\n"]
        assert job.exit_codes == [0]

    def test_nonzero_exit_is_executor_error(self, backend):
        handle = backend.submit(spec(Executor(image="alpine", command=("sh", "-c", "exit 1"))))
        job = wait_terminal(backend, handle)
        assert job.state == "EXECUTOR_ERROR"
        assert job.exit_codes == [1]
        assert "exit" in (job.error or "")

    def test_unlaunchable_command_is_system_error(self, backend):
        handle = backend.submit(spec(Executor(image="alpine", command=("/no/such/binary",))))
        job = wait_terminal(backend, handle)
        assert job.state == "SYSTEM_ERROR"

    def test_unknown_handle(self, backend):
        with pytest.raises(UnknownHandle):
            backend.poll("local-ghost")
        with pytest.raises(UnknownHandle):
            backend.cancel("local-ghost")

    def test_capacity_zero_rejects(self, tmp_path):
        b = LocalBackend(root=tmp_path / "full", capacity=0)
        with pytest.raises(SubmissionRejected):
            b.submit(spec(Executor(image="alpine", command=("true",))))
        b.shutdown()

    def test_capacity_frees_after_terminal(self, tmp_path):
        b = LocalBackend(root=tmp_path / "one", capacity=1)
        first = b.submit(spec(Executor(image="alpine", command=("true",))))
        wait_terminal(b, first)
        second = b.submit(spec(Executor(image="alpine", command=("true",))))
        wait_terminal(b, second)
        b.shutdown()

    def test_cancel_sleeping_job(self, backend):
        handle = backend.submit(spec(Executor(image="alpine", command=("sleep", "30"))))
        while backend.poll(handle).state == "QUEUED":
            time.sleep(0.01)
        assert backend.cancel(handle) is True
        job = wait_terminal(backend, handle, timeout=5)
        assert job.state == "CANCELED"

    def test_cancel_complete_job_is_noop(self, backend):
        handle = backend.submit(spec(Executor(image="alpine", command=("true",))))
        wait_terminal(backend, handle)
        assert backend.cancel(handle) is False
        assert backend.poll(handle).state == "COMPLETE"

    def test_state_monotonic_after_terminal(self, backend):
        handle = backend.submit(spec(Executor(image="alpine", command=("true",))))
        wait_terminal(backend, handle)
        states = {backend.poll(handle).state for _ in range(20)}
        assert states == {"COMPLETE"}

    def test_sequential_executors_share_workspace(self, backend):
        handle = backend.submit(
            spec(
                Executor(image="alpine", command=("sh", "-c", "echo one > /work/f")),
                Executor(image="alpine", command=("sh", "-c", "cat /work/f")),
                volumes=["/work"],
            )
        )
        job = wait_terminal(backend, handle)
        assert job.state == "COMPLETE"
        assert job.stdout == ["", "one\n"]
        assert job.exit_codes == [0, 0]

    def test_sandbox_isolation_between_jobs(self, backend):
        a = backend.submit(
            spec(
                Executor(image="alpine", command=("sh", "-c", "echo marker > /work/a")),
                volumes=["/work"],
            )
        )
        wait_terminal(backend, a)
        b = backend.submit(
            spec(Executor(image="alpine", command=("ls", "/work")), volumes=["/work"])
        )
        job = wait_terminal(backend, b)
        assert job.state == "COMPLETE"
        assert "marker" not in job.stdout[0]
        assert "a" not in job.stdout[0].split()

    def test_env_and_workdir(self, backend):
        handle = backend.submit(
            spec(
                Executor(
                    image="alpine",
                    command=("sh", "-c", "echo $GREETING; pwd"),
                    env={"GREETING": "salut"},
                    workdir="/work/sub",
                ),
                volumes=["/work"],
            )
        )
        job = wait_terminal(backend, handle)
        assert job.state == "COMPLETE"
        lines = job.stdout[0].splitlines()
        assert lines[0] == "salut"
        assert lines[1].endswith("/volumes/work/sub")

    def test_shared_volumes_dir(self, backend, tmp_path):
        shared = tmp_path / "shared-volumes"
        shared.mkdir()
        first = backend.submit(
            spec(
                Executor(image="alpine", command=("sh", "-c", "echo relay > /v/x")),
                volumes=["/v"],
                volumes_dir=shared,
            )
        )
        wait_terminal(backend, first)
        second = backend.submit(
            spec(
                Executor(image="alpine", command=("cat", "/v/x")),
                volumes=["/v"],
                volumes_dir=shared,
            )
        )
        job = wait_terminal(backend, second)
        assert job.stdout == ["relay\n"]

    def test_log_file_layout(self, backend, tmp_path):
        handle = backend.submit(
            spec(Executor(image="alpine", command=("sh", "-c", "echo out; echo err >&2")))
        )
        wait_terminal(backend, handle)
        job_dir = backend.root / handle
        assert (job_dir / "logs" / "executor-0.out").read_text() == "out\n"
        assert (job_dir / "logs" / "executor-0.err").read_text() == "err\n"
        assert (job_dir / "volumes").is_dir()


class TestContainerEngineDelegation:
    def test_argv_construction(self, tmp_path):
        from tasklab.backends.local import container_argv

        executor = Executor(
            image="alpine:3.19",
            command=("sh", "-c", "ls /data"),
            env={"A": "1"},
            workdir="/data/w",
        )
        argv = container_argv("docker", executor, ("/data",), tmp_path)
        assert argv == [
            "docker",
            "run",
            "--rm",
            "-v",
            f"{tmp_path / 'data'}:/data",
            "-e",
            "A=1",
            "-w",
            "/data/w",
            "alpine:3.19",
            "sh",
            "-c",
            "ls /data",
        ]

    def test_engine_binary_is_invoked(self, tmp_path):
        # a fake "engine" script stands in for docker and records its argv
        engine = tmp_path / "fakedocker"
        engine.write_text("#!/bin/sh\necho engine-called $@\n")
        engine.chmod(0o755)
        backend = LocalBackend(root=tmp_path / "jobs", container_engine=str(engine))
        handle = backend.submit(
            spec(Executor(image="img:1", command=("echo", "inner")), volumes=["/v"])
        )
        job = wait_terminal(backend, handle)
        backend.shutdown()
        assert job.state == "COMPLETE"
        assert job.stdout[0].startswith("engine-called run --rm")
        assert "img:1 echo inner" in job.stdout[0]


class TestStateMapping:
    def test_total_mapping(self):
        assert job_state_to_status("QUEUED") is ExecutionStatus.SCHEDULED
        assert job_state_to_status("RUNNING") is ExecutionStatus.RUNNING
        assert job_state_to_status("COMPLETE") is ExecutionStatus.COMPLETED
        assert job_state_to_status("EXECUTOR_ERROR") is ExecutionStatus.ERROR
        assert job_state_to_status("SYSTEM_ERROR") is ExecutionStatus.ERROR
        assert job_state_to_status("CANCELED") is ExecutionStatus.CANCELED


class TestTesSerialize:
    def test_single_executor_mapping(self):
        task = make_task(("echo", "hi"), name="t1")
        doc = tes_serialize(task)
        assert len(doc["executors"]) == 1
        assert doc["executors"][0]["command"] == ["echo", "hi"]
        assert doc["executors"][0]["image"] == "alpine"
        assert doc["name"] == "t1"

    def test_volume_order_preserved(self):
        task = make_task(volumes=(Volume(path="/b"), Volume(path="/a")))
        assert tes_serialize(task)["volumes"] == ["/b", "/a"]

    def test_mounts_and_resources(self):
        task = make_task(
            inputs=(MountPoint(url="in/x", path="/v/x", direction="input"),),
            outputs=(MountPoint(url="out/y", path="/v/y", direction="output"),),
            volumes=(Volume(path="/v"),),
            resources=Resources(cpu_cores=3, ram_gb=7.5, disk_gb=20.0),
        )
        doc = tes_serialize(task)
        assert doc["inputs"] == [{"url": "in/x", "path": "/v/x", "type": "FILE"}]
        assert doc["outputs"] == [{"url": "out/y", "path": "/v/y", "type": "FILE"}]
        assert doc["resources"] == {"cpu_cores": 3, "ram_gb": 7.5, "disk_gb": 20.0}


def random_task(rng: random.Random):
    executors = []
    for i in range(rng.randint(1, 3)):
        env = {f"V{k}": str(rng.randint(0, 9)) for k in range(rng.randint(0, 2))}
        workdir = "/v/w" if rng.random() < 0.4 else None
        executors.append(
            Executor(
                image=rng.choice(["alpine:3.19", "debian:12", "busybox"]),
                command=tuple(["run"] + [str(rng.randint(0, 99)) for _ in range(rng.randint(0, 3))]),
                env=env,
                workdir=workdir,
            )
        )
    inputs = tuple(
        MountPoint(url=f"in/{i}", path=f"/v/in{i}", direction="input")
        for i in range(rng.randint(0, 2))
    )
    outputs = tuple(
        MountPoint(url=f"out/{i}", path=f"/v/out{i}", direction="output")
        for i in range(rng.randint(0, 2))
    )
    return make_task(
        executors=executors,
        name=f"task-{rng.randint(0, 1_000_000)}",
        inputs=inputs,
        outputs=outputs,
        volumes=(Volume(path="/v"),),
        resources=Resources(
            cpu_cores=rng.randint(1, 8),
            ram_gb=round(rng.uniform(0.5, 16.0), 2),
            disk_gb=round(rng.uniform(1.0, 100.0), 2),
        ),
    )


class TestTesClientAgainstMock:
    @pytest.fixture
    def mock(self):
        with MockTesServer(queued_seconds=0.0, running_seconds=0.05) as server:
            yield server

    def test_submit_returns_mock_issued_id(self, mock):
        client = TesBackend(mock.url)
        handle = client.submit(
            BackendJobSpec(executors=(Executor(image="alpine", command=("true",)),))
        )
        assert handle in mock.task_ids()

    def test_poll_advances_to_complete(self, mock):
        client = TesBackend(mock.url)
        handle = client.submit(
            BackendJobSpec(
                executors=(
                    Executor(image="alpine", command=("true",)),
                    Executor(image="alpine", command=("true",)),
                )
            )
        )
        job = wait_terminal(client, handle, timeout=5)
        assert job.state == "COMPLETE"
        assert job.exit_codes == [0, 0]  # one log entry per executor

    def test_round_trip_preserves_mapped_fields(self, mock):
        rng = random.Random(42)
        client = TesBackend(mock.url)
        for _ in range(10):
            task = random_task(rng)
            document = tes_serialize(task)
            handle = client.submit(
                BackendJobSpec(
                    executors=task.executors,
                    inputs=task.inputs,
                    outputs=task.outputs,
                    volumes=tuple(v.path for v in task.volumes),
                    resources=task.resources,
                    name=task.name or "",
                )
            )
            stored = mock.render_task(handle)
            for field in ("name", "executors", "inputs", "outputs", "volumes", "resources"):
                assert stored[field] == document[field]

    def test_cancel_flow(self, mock):
        mock.running_seconds = 30.0
        client = TesBackend(mock.url)
        handle = client.submit(
            BackendJobSpec(executors=(Executor(image="alpine", command=("sleep", "5")),))
        )
        assert client.cancel(handle) is True
        assert client.poll(handle).state == "CANCELED"

    def test_cancel_after_complete_is_false(self, mock):
        client = TesBackend(mock.url)
        handle = client.submit(
            BackendJobSpec(executors=(Executor(image="alpine", command=("true",)),))
        )
        wait_terminal(client, handle, timeout=5)
        assert client.cancel(handle) is False
        assert client.poll(handle).state == "COMPLETE"

    def test_unknown_handle(self, mock):
        client = TesBackend(mock.url)
        with pytest.raises(UnknownHandle):
            client.poll("tes-ghost")

    def test_fault_reject_submissions(self, mock):
        mock.reject_submissions = True
        client = TesBackend(mock.url)
        with pytest.raises(SubmissionRejected):
            client.submit(BackendJobSpec(executors=(Executor(image="a", command=("true",)),)))

    def test_fault_system_error(self, mock):
        mock.fail_with_system_error = True
        client = TesBackend(mock.url)
        handle = client.submit(
            BackendJobSpec(executors=(Executor(image="a", command=("true",)),))
        )
        job = wait_terminal(client, handle, timeout=5)
        assert job.state == "SYSTEM_ERROR"
        assert job.error

    def test_fault_drop_connections(self, mock):
        from tasklab.errors import BackendUnavailable

        client = TesBackend(mock.url)
        handle = client.submit(
            BackendJobSpec(executors=(Executor(image="a", command=("true",)),))
        )
        mock.drop_connections = True
        with pytest.raises(BackendUnavailable):
            client.poll(handle)
