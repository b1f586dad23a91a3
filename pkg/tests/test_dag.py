import json

import numpy as np
import pytest
from hypothesis import given, strategies as st

from tcgen.dag import (DagSpecError, IdiomKind, UnsupportedIdiom, build_initial_schedule, classify_idiom,
                       fuse_pointwise_chain, parse_dag_spec, render_dag)
from tcgen.exprtree import Access, Expr, compound_name
from tcgen.oracles import oracle_fp64, random_inputs
from tcgen.schedule import render_tree


def spec(tensors, nodes, live):
    decl = []
    for t in tensors:
        name, dims, *rest = t
        decl.append({"name": name, "dims": list(dims), "dtype": "fp16", "layout": rest[0] if rest else "row"})
    return json.dumps({"params": {"M": None, "N": None, "K": None}, "tensors": decl,
                       "nodes": [{"id": i, "op": o, "inputs": list(a), "output": r} for i, o, a, r in nodes],
                       "liveOut": live})


MATMUL = spec([("A", "MK"), ("B", "KN", "col"), ("C", "MN")], [("mm", "matmul", "AB", "C")], ["C"])


def test_single_matmul():
    d = parse_dag_spec(MATMUL)
    assert len(d.nodes) == 1 and d.edges == ()
    assert classify_idiom(d) is IdiomKind.PlainMatmul
    assert d.nodes[0].expr == Expr("mul_acc", (Access("C", ("i", "j")), Access("A", ("i", "k")),
                                              Access("B", ("k", "j"))))


def test_epilogue_listing(dag):
    d = dag("matmul_bias_relu")
    assert len(d.nodes) == 2 and [(a, b, t) for a, b, t in d.edges] == [("mm", "act", "C")]
    assert classify_idiom(d) is IdiomKind.EpiloguePointwise
    assert compound_name(d.node("act").expr) == "relu_add"


def test_sum_of_matmuls(dag):
    d = dag("sum_of_matmuls")
    assert len(d.nodes) == 3 and len(d.edges) == 2
    assert classify_idiom(d) is IdiomKind.MultiMatmulEpilogue


def test_prologue(dag):
    d = dag("relu_matmul")
    assert classify_idiom(d) is IdiomKind.ProloguePointwise
    (mm,) = fuse_pointwise_chain(d).nodes
    assert mm.expr.args[1] == Expr("relu", (Access("A", ("i", "k")),))


def test_chain_fuses_to_relu_add(dag):
    d = dag("matmul_bias_relu_chain")
    f = fuse_pointwise_chain(d)
    assert len(f.nodes) == 2
    assert f.nodes[1].op == "relu_add"
    assert f.live_out == d.live_out
    assert f.nodes[1].expr == dag("matmul_bias_relu").node("act").expr


@pytest.mark.parametrize("name", ["matmul", "matmul_bias_relu", "matmul_bias_sigmoid", "sum_of_matmuls"])
def test_single_pointwise_node_unchanged(dag, name):
    d = dag(name)
    f = fuse_pointwise_chain(d)
    assert [n.expr for n in f.nodes] == [n.expr for n in d.nodes]


@pytest.mark.parametrize("name", ["matmul", "matmul_bias_relu", "matmul_bias_relu_chain", "matmul_bias_sigmoid",
                                  "matmul_bias_tanh", "relu_matmul", "sum_of_matmuls"])
def test_render_round_trip(dag, name):
    d = dag(name)
    again = parse_dag_spec(render_dag(d), name=d.name)
    assert again == d
    assert render_dag(again) == render_dag(d)


@pytest.mark.parametrize("name", ["matmul_bias_relu_chain", "relu_matmul", "sum_of_matmuls", "matmul_bias_tanh"])
def test_fusion_preserves_function(dag, name):
    d = dag(name)
    f = fuse_pointwise_chain(d)
    inputs = random_inputs(d, {"M": 16, "N": 16, "K": 16}, seed=3)
    _, ref, _ = oracle_fp64(d, inputs)
    _, got, _ = oracle_fp64(f, inputs)
    assert set(ref) == set(got)
    for t in ref:
        np.testing.assert_allclose(got[t], ref[t], rtol=0, atol=1e-12)


BAD = [
    ("{not json", "syntax error at line 1"),
    (MATMUL.replace('"liveOut"', '"extra": 1, "liveOut"'), "unknown keys"),
    (MATMUL.replace('"matmul"', '"conv"'), "unknown op"),
    (spec([("A", "MK"), ("B", "NK"), ("C", "MN")], [("mm", "matmul", "AB", "C")], ["C"]), "shape mismatch"),
    (spec([("A", "MK"), ("B", "KN"), ("C", "MN"), ("D", "MK")],
          [("mm", "matmul", "AB", "C"), ("r", "relu", "C", "D")], ["D"]), "shape mismatch"),
    (spec([("A", "MK"), ("B", "KN"), ("C", "MN")], [("mm", "matmul", "AX", "C")], ["C"]), "undeclared tensor"),
    (spec([("A", "MN"), ("B", "MN")], [("x", "relu", "A", "B"), ("y", "relu", "B", "A")], ["A"]), "cycle"),
    (MATMUL.replace('"fp16"', '"fp32"', 1), "dtype"),
]


@pytest.mark.parametrize("text,msg", BAD)
def test_rejections(text, msg):
    with pytest.raises(DagSpecError, match=msg):
        parse_dag_spec(text)


UNSUPPORTED = [
    spec([("A", "MK"), ("B", "KN"), ("C", "MN"), ("D", "NK"), ("E", "MK")],
         [("m1", "matmul", "AB", "C"), ("m2", "matmul", "CD", "E")], ["E"]),  # matmul feeding matmul
    spec([("A", "MN"), ("B", "MN")], [("r", "relu", "A", "B")], ["B"]),  # no matmul
    spec([("A", "MK"), ("Ar", "MK"), ("B", "KN"), ("C", "MN"), ("E", "MN")],
         [("p", "relu", "A", "Ar"), ("mm", "matmul", ("Ar", "B"), "C"), ("e", "relu", "C", "E")], ["E"]),
]


@pytest.mark.parametrize("text", UNSUPPORTED)
def test_unsupported_idioms(text):
    with pytest.raises(UnsupportedIdiom):
        classify_idiom(parse_dag_spec(text))


def test_initial_schedules(dag):
    assert render_tree(build_initial_schedule(dag("matmul"))) == (
        "DOMAIN: S[i, j, k] : 0 ≤ i < M ∧ 0 ≤ j < N ∧ 0 ≤ k < K\n"
        "  BAND: S[i, j, k] → [i, j, k]\n")
    ep = render_tree(build_initial_schedule(fuse_pointwise_chain(dag("matmul_bias_relu"))))
    assert "S2[i, j] → [i, j, K]" in ep and "SEQUENCE" in ep
    mm2 = render_tree(build_initial_schedule(fuse_pointwise_chain(dag("sum_of_matmuls"))))
    assert mm2.count("FILTER") == 3 and "FILTER: S3[i, j]" in mm2


OPS = ["relu", "sigmoid", "tanh"]


@given(st.lists(st.sampled_from(OPS), min_size=1, max_size=3), st.integers(0, 1000))
def test_random_chains_fuse_and_preserve(chain, seed):
    tensors = [("A", "MK"), ("B", "KN", "col"), ("C", "MN"), ("bias", "MN"), ("T0", "MN")]
    nodes = [("mm", "matmul", "AB", "C"), ("b", "bias-add", ("C", "bias"), "T0")]
    for i, op in enumerate(chain):
        tensors.append((f"T{i + 1}", "MN"))
        nodes.append((f"n{i}", op, (f"T{i}",), f"T{i + 1}"))
    d = parse_dag_spec(spec(tensors, nodes, [f"T{len(chain)}"]))
    f = fuse_pointwise_chain(d)
    assert len(f.nodes) == 2 and compound_name(f.nodes[1].expr) == "_".join(reversed(chain)) + "_add"
    inputs = random_inputs(d, {"M": 16, "N": 16, "K": 8}, seed)
    _, ref, _ = oracle_fp64(d, inputs)
    _, got, _ = oracle_fp64(f, inputs)
    t = f.live_out[0]
    np.testing.assert_allclose(got[t], ref[t], rtol=0, atol=1e-12)
