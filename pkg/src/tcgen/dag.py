"""Computation DAG specs: parsing, idiom classification, pointwise fusion, initial schedules.

DAG spec schema (JSON)::

    {
      "params":  {"M": 256, "N": 256, "K": null},      # int or null per size
      "tensors": [{"name": "A", "dims": ["M", "K"], "dtype": "fp16", "layout": "row"}, ...],
      "nodes":   [{"id": "mm", "op": "matmul", "inputs": ["A", "B"], "output": "C"}, ...],
      "liveOut": ["E"]
    }

``op`` is one of matmul, add, sub, bias-add, relu, sigmoid, tanh, or a
compound name such as ``relu_add`` (unary ops wrapping one inner op).
Every tensor, including intermediates, must be declared.
"""
from __future__ import annotations

import enum
import json
from dataclasses import dataclass, replace

from .affine import Aff
from .exprtree import Access, Expr, Node, UNARY_OPS, compound_name, split_compound
from .schedule import PAR, SEQ, Band, Domain, Filter, Sequence, StmtDomain

TOP_KEYS = {"params", "tensors", "nodes", "liveOut"}
TENSOR_KEYS = {"name", "dims", "dtype", "layout"}
NODE_KEYS = {"id", "op", "inputs", "output"}
PARAM_NAMES = ("M", "N", "K")
SIMPLE_OPS = ("matmul", "add", "sub", "bias-add", "relu", "sigmoid", "tanh")


class DagSpecError(ValueError):
    pass


class UnsupportedIdiom(ValueError):
    pass


class IdiomKind(enum.Enum):
    PlainMatmul = "plain"
    ProloguePointwise = "prologue"
    EpiloguePointwise = "epilogue"
    MultiMatmulEpilogue = "multi"


@dataclass(frozen=True)
class TensorDecl:
    name: str
    dims: tuple[str, ...]
    layout: str = "row"
    dtype: str = "fp16"


@dataclass(frozen=True)
class StatementNode:
    id: str
    op: str
    inputs: tuple[str, ...]
    output: str
    dims: tuple[str, ...]
    uppers: tuple[str, ...]
    expr: Expr
    write: Access
    layouts: tuple[str, ...] = ()

    @property
    def reads(self) -> list[Access]:
        return self.expr.leaves()

    @property
    def is_matmul(self) -> bool:
        return self.expr.op in ("mul_acc", "macro_mma")


@dataclass(frozen=True)
class ComputationDag:
    params: dict
    tensors: dict
    nodes: tuple[StatementNode, ...]
    edges: tuple[tuple[str, str, str], ...]
    live_out: tuple[str, ...]
    name: str = "kernel"

    def node(self, nid: str) -> StatementNode:
        for n in self.nodes:
            if n.id == nid:
                return n
        raise KeyError(nid)

    def producer(self, tensor: str) -> StatementNode | None:
        for n in self.nodes:
            if n.output == tensor:
                return n
        return None

    def consumers(self, tensor: str) -> list[StatementNode]:
        return [n for n in self.nodes if tensor in n.inputs]

    def matmuls(self) -> list[StatementNode]:
        return [n for n in self.nodes if n.is_matmul]

    def topological(self) -> list[StatementNode]:
        """Nodes with every producer before its consumers (declaration order breaks ties)."""
        done: set[str] = set()
        out = []
        while len(out) < len(self.nodes):
            for n in self.nodes:
                if n.id not in done and all(a in done for a, b, _ in self.edges if b == n.id):
                    done.add(n.id)
                    out.append(n)
                    break
        return out

    def inputs(self) -> list[str]:
        """External inputs: tensors no node produces, in declaration order."""
        produced = {n.output for n in self.nodes}
        used = {t for n in self.nodes for t in n.inputs}
        return [t for t in self.tensors if t not in produced and t in used]


# parsing ----------------------------------------------------------------------

def _require(cond, msg):
    if not cond:
        raise DagSpecError(msg)


def _check_keys(obj, allowed, where):
    _require(isinstance(obj, dict), f"{where}: expected an object")
    extra = set(obj) - allowed
    _require(not extra, f"{where}: unknown keys {sorted(extra)}")
    missing = allowed - set(obj)
    _require(not missing, f"{where}: missing keys {sorted(missing)}")


def _op_expr(op: str, args: list[Node]) -> Expr:
    if op == "bias-add":
        op = "add"
    parts = split_compound(op)
    inner = parts[-1]
    arity = 1 if inner in UNARY_OPS else 2
    if len(args) != arity:
        raise DagSpecError(f"op {op!r} takes {arity} inputs, got {len(args)}")
    e: Expr = Expr(inner, tuple(args))
    for p in reversed(parts[:-1]):
        e = Expr(p, (e,))
    return e


def parse_dag_spec(text: str, name: str = "kernel") -> ComputationDag:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise DagSpecError(f"syntax error at line {exc.lineno} column {exc.colno}: {exc.msg}") from exc
    _check_keys(doc, TOP_KEYS, "spec")
    params = doc["params"]
    _require(isinstance(params, dict), "params: expected an object")
    _require(set(params) <= set(PARAM_NAMES), f"params: unknown keys {sorted(set(params) - set(PARAM_NAMES))}")
    for k, v in params.items():
        _require(v is None or (isinstance(v, int) and v > 0), f"params.{k}: expected a positive integer or null")
    params = {p: params.get(p) for p in PARAM_NAMES}

    tensors: dict[str, TensorDecl] = {}
    _require(isinstance(doc["tensors"], list), "tensors: expected a list")
    for i, t in enumerate(doc["tensors"]):
        _check_keys(t, TENSOR_KEYS, f"tensors[{i}]")
        _require(t["dtype"] == "fp16", f"tensors[{i}]: dtype must be fp16")
        _require(t["layout"] in ("row", "col"), f"tensors[{i}]: layout must be row or col")
        _require(isinstance(t["dims"], list) and len(t["dims"]) == 2
                 and all(d in PARAM_NAMES for d in t["dims"]), f"tensors[{i}]: dims must be two of M, N, K")
        _require(t["name"] not in tensors, f"tensors[{i}]: duplicate tensor {t['name']!r}")
        tensors[t["name"]] = TensorDecl(t["name"], tuple(t["dims"]), t["layout"], t["dtype"])

    nodes: list[StatementNode] = []
    outputs: dict[str, str] = {}
    _require(isinstance(doc["nodes"], list) and doc["nodes"], "nodes: expected a non-empty list")
    for i, n in enumerate(doc["nodes"]):
        _check_keys(n, NODE_KEYS, f"nodes[{i}]")
        op, ins, out = n["op"], list(n["inputs"]), n["output"]
        for t in ins + [out]:
            _require(t in tensors, f"nodes[{i}] ({n['id']}): undeclared tensor {t!r}")
        _require(out not in outputs, f"nodes[{i}]: tensor {out!r} produced twice")
        _require(out not in ins, f"nodes[{i}]: node reads its own output")
        outputs[out] = n["id"]
        _require(all(x.id != n["id"] for x in nodes), f"nodes[{i}]: duplicate id {n['id']!r}")
        if op == "matmul":
            _require(len(ins) == 2, f"nodes[{i}]: matmul takes 2 inputs")
            a, b, c = tensors[ins[0]], tensors[ins[1]], tensors[out]
            if not (a.dims[1] == b.dims[0] and c.dims == (a.dims[0], b.dims[1])):
                raise DagSpecError(f"nodes[{i}]: shape mismatch {a.dims} x {b.dims} -> {c.dims}")
            dims, uppers = ("i", "j", "k"), (a.dims[0], b.dims[1], a.dims[1])
            expr = Expr("mul_acc", (Access(out, ("i", "j")), Access(ins[0], ("i", "k")), Access(ins[1], ("k", "j"))))
            layouts = (a.layout, b.layout)
        else:
            if op not in SIMPLE_OPS:
                try:
                    split_compound(op)
                except ValueError as exc:
                    raise DagSpecError(f"nodes[{i}]: unknown op kind {op!r}") from exc
            shape = tensors[out].dims
            for t in ins:
                if tensors[t].dims != shape:
                    raise DagSpecError(f"nodes[{i}]: shape mismatch {t}{tensors[t].dims} vs {out}{shape}")
            dims, uppers = ("i", "j"), shape
            expr = _op_expr(op, [Access(t, ("i", "j")) for t in ins])
            layouts = tuple(tensors[t].layout for t in ins)
        nodes.append(StatementNode(n["id"], op, tuple(ins), out, dims, tuple(uppers), expr,
                                   Access(out, ("i", "j")), layouts))

    edges = []
    for n in nodes:
        for t in n.inputs:
            if t in outputs:
                edges.append((outputs[t], n.id, t))
    _check_acyclic([n.id for n in nodes], edges)
    live = doc["liveOut"]
    _require(isinstance(live, list) and live, "liveOut: expected a non-empty list")
    for t in live:
        _require(t in outputs, f"liveOut: {t!r} is not produced by any node")
    return ComputationDag(params, tensors, tuple(nodes), tuple(edges), tuple(live), name)


def _check_acyclic(ids, edges):
    indeg = {i: 0 for i in ids}
    succ: dict[str, list[str]] = {i: [] for i in ids}
    for a, b, _ in edges:
        indeg[b] += 1
        succ[a].append(b)
    ready = [i for i in ids if indeg[i] == 0]
    seen = 0
    while ready:
        x = ready.pop()
        seen += 1
        for y in succ[x]:
            indeg[y] -= 1
            if indeg[y] == 0:
                ready.append(y)
    if seen != len(ids):
        raise DagSpecError("nodes form a cycle")


def load_dag(path) -> ComputationDag:
    from pathlib import Path
    p = Path(path)
    return parse_dag_spec(p.read_text(), name=p.stem)


def render_dag(dag: ComputationDag) -> str:
    doc = {
        "params": dict(dag.params),
        "tensors": [{"name": t.name, "dims": list(t.dims), "dtype": t.dtype, "layout": t.layout}
                    for t in dag.tensors.values()],
        "nodes": [{"id": n.id, "op": n.op, "inputs": list(n.inputs), "output": n.output} for n in dag.nodes],
        "liveOut": list(dag.live_out),
    }
    return json.dumps(doc, indent=2) + "\n"


# classification -----------------------------------------------------------------

def _upstream(dag, tensor) -> set[str]:
    out: set[str] = set()
    stack = [tensor]
    while stack:
        p = dag.producer(stack.pop())
        if p is not None and p.id not in out:
            out.add(p.id)
            stack.extend(p.inputs)
    return out


def classify_idiom(dag: ComputationDag) -> IdiomKind:
    mms = dag.matmuls()
    if not mms:
        raise UnsupportedIdiom("no matmul in the DAG")
    for t in {t for n in dag.nodes for t in n.inputs}:
        if len(dag.consumers(t)) > 1 and dag.producer(t) is not None:
            raise UnsupportedIdiom(f"intermediate {t} has more than one consumer")
    sinks = [n for n in dag.nodes if not dag.consumers(n.output)]
    if len(sinks) != 1:
        raise UnsupportedIdiom(f"expected a single sink, found {[n.id for n in sinks]}")
    sink = sinks[0]
    if tuple(dag.live_out) != (sink.output,):
        raise UnsupportedIdiom(f"live-out must be exactly the sink output {sink.output}")
    if dag.tensors[sink.output].layout != "row":
        raise UnsupportedIdiom("the live-out tensor must be row-major")
    mm_ids = {m.id for m in mms}
    for m in mms:
        for t in m.inputs:
            if _upstream(dag, t) & mm_ids:
                raise UnsupportedIdiom(f"matmul {m.id} consumes another matmul's result")
    prologue = set()
    for m in mms:
        for t in m.inputs:
            prologue |= _upstream(dag, t)
    pointwise = {n.id for n in dag.nodes if not n.is_matmul}
    epilogue = pointwise - prologue
    if prologue and epilogue:
        raise UnsupportedIdiom("prologue and epilogue fusion together are not supported")
    if prologue:
        if len(mms) != 1:
            raise UnsupportedIdiom("prologue fusion is supported for a single matmul only")
        _check_prologue(dag, mms[0])
        return IdiomKind.ProloguePointwise
    if not epilogue:
        return IdiomKind.PlainMatmul
    for n in dag.nodes:
        if n.id in epilogue:
            for t in n.inputs:
                if dag.producer(t) is None and dag.tensors[t].layout != "row":
                    raise UnsupportedIdiom(f"epilogue operand {t} must be row-major")
    if len(mms) == 1:
        return IdiomKind.EpiloguePointwise
    shapes = {(m.uppers) for m in mms}
    if len(shapes) != 1:
        raise UnsupportedIdiom("multi-matmul epilogue requires matmuls of the same M, N, K")
    return IdiomKind.MultiMatmulEpilogue


def _check_prologue(dag, mm):
    for t, want in zip(mm.inputs, mm.layouts):
        for nid in _upstream(dag, t):
            n = dag.node(nid)
            for x in (n.output,) + n.inputs:
                if dag.tensors[x].layout != want:
                    raise UnsupportedIdiom(f"prologue tensor {x} layout differs from operand {t} ({want})")


# fusion -------------------------------------------------------------------------

def _inline(dag, node: Node, stop: set[str]) -> Node:
    """Substitute producers of pointwise intermediates into ``node``."""
    if isinstance(node, Access):
        p = dag.producer(node.tensor)
        if p is None or p.id in stop or p.is_matmul:
            return node
        sub = _reindex(p.expr, node.index)
        return _inline(dag, sub, stop)
    return Expr(node.op, tuple(_inline(dag, a, stop) for a in node.args), node.attrs)


def _reindex(e: Node, index) -> Node:
    if isinstance(e, Access):
        return Access(e.tensor, tuple(index))
    return Expr(e.op, tuple(_reindex(a, index) for a in e.args), e.attrs)


def fuse_pointwise_chain(dag: ComputationDag) -> ComputationDag:
    idiom = classify_idiom(dag)
    if idiom == IdiomKind.PlainMatmul:
        return dag
    if idiom == IdiomKind.ProloguePointwise:
        (mm,) = dag.matmuls()
        c, a, b = mm.expr.args
        a2, b2 = _inline(dag, a, set()), _inline(dag, b, set())
        ins = tuple(x.tensor for x in (Expr("_", (a2, b2))).leaves())
        expr = Expr(mm.expr.op, (c, a2, b2), mm.expr.attrs)
        new_mm = replace(mm, expr=expr, inputs=ins)
        return replace(dag, nodes=(new_mm,), edges=())
    sink = next(n for n in dag.nodes if not dag.consumers(n.output))
    expr = _inline(dag, sink.expr, set())
    ins = tuple(dict.fromkeys(x.tensor for x in expr.leaves()))
    name = compound_name(expr) or sink.op
    fused = replace(sink, expr=expr, inputs=ins, op=name,
                    layouts=tuple(dag.tensors[t].layout for t in ins))
    mms = dag.matmuls()
    edges = tuple((m.id, fused.id, m.output) for m in mms if m.output in ins)
    return replace(dag, nodes=tuple(mms) + (fused,), edges=edges)


# initial schedule --------------------------------------------------------------

def statement_names(dag: ComputationDag) -> dict[str, str]:
    """Node id -> statement name: S for a single statement, else S1.. (matmuls first)."""
    if len(dag.nodes) == 1:
        return {dag.nodes[0].id: "S"}
    order = [n for n in dag.nodes if n.is_matmul] + [n for n in dag.nodes if not n.is_matmul]
    return {n.id: f"S{i + 1}" for i, n in enumerate(order)}


def build_initial_schedule(dag: ComputationDag) -> Domain:
    names = statement_names(dag)
    order = sorted(dag.nodes, key=lambda n: int(names[n.id][1:] or 0))
    stmts = []
    sched = []
    for n in order:
        stmts.append(StmtDomain(names[n.id], n.dims, n.uppers, (), n.expr, n.write))
        if n.is_matmul:
            vec = tuple(Aff.var(d) for d in n.dims)
        else:
            red_upper = dag.matmuls()[0].uppers[2]
            vec = (Aff.var("i"), Aff.var("j"), Aff.var(red_upper))
        sched.append((names[n.id], vec))
    if len(order) == 1:
        child = Band(tuple(sched), (PAR, PAR, SEQ))
    else:
        seq = Sequence(tuple(Filter((names[n.id],)) for n in order))
        child = Band(tuple(sched), (PAR, PAR, SEQ), (), seq)
    return Domain(tuple(stmts), PARAM_NAMES, child)
