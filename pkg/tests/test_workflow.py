from __future__ import annotations

import itertools
import json
import random
from typing import Iterator

import pytest
from hypothesis import given, settings, strategies as st

from tasklab.domain import ParseError
from tasklab.workflow import (
    CycleError,
    UnsatisfiedRead,
    WorkflowSpec,
    dependency_edges,
    parse_workflow,
    resolve_order,
)


def wf_doc(executors, inputs=(), outputs=(), volumes=("/v",), name="wf"):
    return {
        "name": name,
        "executors": list(executors),
        "inputs": list(inputs),
        "outputs": list(outputs),
        "volumes": [{"path": p} for p in volumes],
        "resources": {"cpu_cores": 1, "ram_gb": 0.5, "disk_gb": 0.5},
    }


def wx(executor_id, reads=(), writes=()):
    return {
        "id": executor_id,
        "image": "alpine",
        "command": ["true"],
        "env": {},
        "reads": list(reads),
        "writes": list(writes),
    }


# ---------------------------------------------------------------------------
# Brute-force oracle: enumerate all topological orders of a dependency graph.

def all_topological_orders(ids: list[str], edges: set[tuple[str, str]]) -> Iterator[list[str]]:
    indegree = {i: 0 for i in ids}
    successors: dict[str, list[str]] = {i: [] for i in ids}
    for src, dst in edges:
        indegree[dst] += 1
        successors[src].append(dst)
    order: list[str] = []
    used: set[str] = set()

    def backtrack() -> Iterator[list[str]]:
        if len(order) == len(ids):
            yield list(order)
            return
        for node in ids:
            if node in used or indegree[node] != 0:
                continue
            used.add(node)
            order.append(node)
            for succ in successors[node]:
                indegree[succ] -= 1
            yield from backtrack()
            for succ in successors[node]:
                indegree[succ] += 1
            order.pop()
            used.remove(node)

    yield from backtrack()


def assert_plan_valid(spec: WorkflowSpec) -> None:
    plan = resolve_order(spec)
    ids = [e.id for e in spec.executors]
    # completeness: every executor in exactly one stage
    flat = plan.linearization()
    assert sorted(flat) == sorted(ids)
    assert sum(len(s) for s in plan.stages) == len(ids)
    edges = dependency_edges(spec)
    # stage ordering: every dependency edge crosses stages forward
    for src, dst in edges:
        assert plan.stage_of(src) < plan.stage_of(dst)
    # oracle: the linearization is among all topological orders
    assert any(order == flat for order in all_topological_orders(ids, edges))


class TestParseWorkflow:
    def test_minimal_document(self):
        spec = parse_workflow(json.dumps(wf_doc([wx("E1")])))
        assert len(spec.executors) == 1
        assert spec.executors[0].id == "E1"

    def test_duplicate_writer_rejected(self):
        doc = wf_doc([wx("A", writes=["/v/a/x"]), wx("B", writes=["/v/a/x"])], volumes=("/v",))
        with pytest.raises(ParseError, match="duplicate writer"):
            parse_workflow(doc)

    def test_unknown_top_level_field_rejected(self):
        doc = wf_doc([wx("E1")])
        doc["surprise"] = 1
        with pytest.raises(ParseError, match="unknown fields"):
            parse_workflow(doc)

    def test_duplicate_ids_rejected(self):
        with pytest.raises(ParseError, match="duplicated"):
            parse_workflow(wf_doc([wx("E1"), wx("E1")]))

    def test_reads_outside_volumes_rejected(self):
        with pytest.raises(ParseError, match="outside declared volumes"):
            parse_workflow(wf_doc([wx("E1", reads=["/elsewhere/x"])]))

    def test_output_never_written_rejected(self):
        doc = wf_doc(
            [wx("E1", writes=["/v/a"])],
            outputs=[{"url": "o/b", "path": "/v/b"}],
        )
        with pytest.raises(ParseError, match="never written"):
            parse_workflow(doc)

    def test_output_satisfied_by_input_mount(self):
        doc = wf_doc(
            [wx("E1", reads=["/v/a"])],
            inputs=[{"url": "i/a", "path": "/v/a"}],
            outputs=[{"url": "o/a", "path": "/v/a"}],
        )
        spec = parse_workflow(doc)
        assert resolve_order(spec).stages == (("E1",),)

    def test_invalid_json(self):
        with pytest.raises(ParseError, match="invalid JSON"):
            parse_workflow("{nope")


class TestResolveOrder:
    def test_fanout_stages(self):
        spec = parse_workflow(
            wf_doc(
                [
                    wx("E1", writes=["/v/a"]),
                    wx("E2", reads=["/v/a"], writes=["/v/b"]),
                    wx("E3", reads=["/v/a"]),
                ]
            )
        )
        plan = resolve_order(spec)
        assert plan.to_dict() == [["E1"], ["E2", "E3"]]
        # oracle: every topological order puts E1 first; E2/E3 order free
        orders = list(all_topological_orders(["E1", "E2", "E3"], dependency_edges(spec)))
        assert all(order[0] == "E1" for order in orders)
        assert {tuple(o[1:]) for o in orders} == {("E2", "E3"), ("E3", "E2")}
        assert_plan_valid(spec)

    def test_two_node_cycle(self):
        spec = parse_workflow(
            wf_doc(
                [
                    wx("E1", reads=["/v/b"], writes=["/v/a"]),
                    wx("E2", reads=["/v/a"], writes=["/v/b"]),
                ]
            )
        )
        with pytest.raises(CycleError) as excinfo:
            resolve_order(spec)
        assert set(excinfo.value.cycle) == {"E1", "E2"}

    def test_single_executor_identity(self):
        spec = parse_workflow(wf_doc([wx("E1")]))
        assert resolve_order(spec).to_dict() == [["E1"]]

    def test_unsatisfied_read(self):
        spec = parse_workflow(wf_doc([wx("E1", reads=["/v/ghost"])]))
        with pytest.raises(UnsatisfiedRead) as excinfo:
            resolve_order(spec)
        assert excinfo.value.path == "/v/ghost"

    def test_deterministic(self):
        doc = wf_doc(
            [
                wx("E1", writes=["/v/a"]),
                wx("E2", reads=["/v/a"], writes=["/v/b"]),
                wx("E3", reads=["/v/a"]),
                wx("E4", reads=["/v/b"]),
            ]
        )
        plans = {json.dumps(resolve_order(parse_workflow(doc)).to_dict()) for _ in range(10)}
        assert len(plans) == 1

    def test_in_stage_order_follows_declaration_index(self):
        spec = parse_workflow(wf_doc([wx("Z"), wx("A"), wx("M")]))
        assert resolve_order(spec).to_dict() == [["Z", "A", "M"]]


def random_dag_workflow(rng: random.Random, max_nodes: int = 8) -> WorkflowSpec:
    n = rng.randint(1, max_nodes)
    ids = [f"E{i}" for i in range(n)]
    executors = []
    reads: dict[str, list[str]] = {i: [] for i in ids}
    writes: dict[str, list[str]] = {i: [] for i in ids}
    for j in range(n):
        for i in range(j):
            if rng.random() < 0.35:
                path = f"/v/f_{i}_{j}"
                writes[ids[i]].append(path)
                reads[ids[j]].append(path)
    for executor_id in ids:
        executors.append(wx(executor_id, reads=reads[executor_id], writes=writes[executor_id]))
    return parse_workflow(wf_doc(executors))


def random_cyclic_workflow(rng: random.Random) -> WorkflowSpec:
    n = rng.randint(2, 6)
    ids = [f"E{i}" for i in range(n)]
    executors = []
    for index, executor_id in enumerate(ids):
        nxt = ids[(index + 1) % n]
        executors.append(
            wx(executor_id, writes=[f"/v/ring_{executor_id}"], reads=[f"/v/ring_{nxt}"])
        )
    return parse_workflow(wf_doc(executors))


def test_random_dags_validate_against_oracle():
    rng = random.Random(20260810)
    for _ in range(60):
        assert_plan_valid(random_dag_workflow(rng))


def test_injected_cycles_detected():
    rng = random.Random(99)
    for _ in range(25):
        with pytest.raises(CycleError):
            resolve_order(random_cyclic_workflow(rng))


# round-trip property over generated documents

ids_strategy = st.lists(
    st.text(alphabet="ABCDEF", min_size=1, max_size=3), min_size=1, max_size=5, unique=True
)


@settings(max_examples=60, deadline=None)
@given(ids=ids_strategy, data=st.data())
def test_parse_serialize_parse_round_trip(ids, data):
    executors = []
    for index, executor_id in enumerate(ids):
        writes = [f"/v/w_{executor_id}"]
        earlier = ids[:index]
        read_from = data.draw(
            st.lists(st.sampled_from(earlier), unique=True) if earlier else st.just([])
        )
        executors.append(wx(executor_id, reads=[f"/v/w_{src}" for src in read_from], writes=writes))
    spec = parse_workflow(wf_doc(executors))
    again = parse_workflow(json.dumps(spec.to_dict()))
    assert again == spec
