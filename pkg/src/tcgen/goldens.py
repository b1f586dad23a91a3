"""Golden corpus: rendered schedule trees and emitted kernels, compared byte-exact."""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

from .config import REFERENCE, GenConfig
from .dag import load_dag
from .generate import generate
from .ir import dump
from .pipeline import stages
from .schedule import render_tree

REPO = Path(__file__).resolve().parents[2]

# block k 32 keeps one warp along k (no split-K); block k 64 with warp k 32 gives a 2-way split
ONE_SLICE = GenConfig((128, 128, 32), (64, 64, 32), 16)
TWO_SLICES = GenConfig((128, 128, 64), (64, 64, 32), 16)
M32 = GenConfig((128, 128, 64), (64, 64, 64), 32, 1, ("row", "col"))

# golden file -> (dag, config, pipeline stage)
TREE_GOLDENS = {
    "matmul_initial": ("matmul", ONE_SLICE, "initial"),
    "matmul_warp_tiled": ("matmul", ONE_SLICE, "warp_tiled"),
    "matmul_bound": ("matmul", ONE_SLICE, "bound"),
    "matmul_strip_mined": ("matmul", ONE_SLICE, "strip_mined"),
    "matmul_contracted": ("matmul", ONE_SLICE, "contracted"),
    "matmul_splitk2_warp_tiled": ("matmul", TWO_SLICES, "warp_tiled"),
    "matmul_splitk2_bound": ("matmul", TWO_SLICES, "bound"),
    "epilogue_initial": ("matmul_bias_relu", ONE_SLICE, "initial"),
    "epilogue_block_tiled": ("matmul_bias_relu", ONE_SLICE, "block_tiled"),
    "epilogue_hoisted": ("matmul_bias_relu", ONE_SLICE, "hoisted"),
    "epilogue_contracted": ("matmul_bias_relu", ONE_SLICE, "contracted"),
    "sum_of_matmuls_initial": ("sum_of_matmuls", ONE_SLICE, "initial"),
}

# golden kernel -> (dag, config)
KERNEL_GOLDENS = {
    "matmul_reference": ("matmul", REFERENCE),
    "matmul_m32": ("matmul", M32),
    "epilogue_bias_relu": ("matmul_bias_relu", REFERENCE),
    "prologue_relu": ("relu_matmul", REFERENCE),
    "sum_of_matmuls": ("sum_of_matmuls", REFERENCE),
}


@dataclass
class Mismatch:
    path: str
    line: int  # 1-based first divergent line, 0 when the file is missing
    expected: str
    actual: str

    def describe(self) -> str:
        if self.line == 0:
            return f"{self.path}: missing golden file"
        return f"{self.path}:{self.line}: expected {self.expected!r}, got {self.actual!r}"


def render_tree_golden(name: str, dags: Path) -> str:
    dag_name, cfg, stage = TREE_GOLDENS[name]
    for st in stages(load_dag(dags / f"{dag_name}.json"), cfg):
        if st.name == stage:
            return render_tree(st.tree)
    raise KeyError(f"pipeline for {dag_name} has no stage {stage}")


def render_all(dags: Path | None = None) -> dict[str, str]:
    """Relative golden path -> freshly rendered content."""
    dags = dags or REPO / "dags"
    out = {f"trees/{n}.txt": render_tree_golden(n, dags) for n in TREE_GOLDENS}
    for n, (dag_name, cfg) in KERNEL_GOLDENS.items():
        g = generate(load_dag(dags / f"{dag_name}.json"), cfg)
        out[f"kernels/{n}.cu"] = g.source
        out[f"kernels/{n}.ir.txt"] = dump(g.kernel)
    return out


def first_difference(expected: str, actual: str) -> tuple[int, str, str] | None:
    a, b = expected.splitlines(), actual.splitlines()
    for i in range(max(len(a), len(b))):
        x = a[i] if i < len(a) else "<end of file>"
        y = b[i] if i < len(b) else "<end of file>"
        if x != y:
            return i + 1, x, y
    if expected != actual:  # trailing newline only
        return len(a) + 1, repr(expected[-1:]), repr(actual[-1:])
    return None


def check(root: Path | None = None, dags: Path | None = None) -> list[Mismatch]:
    root = root or REPO / "goldens"
    bad = []
    for rel, text in render_all(dags).items():
        p = root / rel
        if not p.exists():
            bad.append(Mismatch(rel, 0, "", ""))
            continue
        d = first_difference(p.read_text(), text)
        if d is not None:
            bad.append(Mismatch(rel, *d))
    return bad


def update(root: Path | None = None, dags: Path | None = None) -> list[Path]:
    root = root or REPO / "goldens"
    written = []
    for rel, text in render_all(dags).items():
        p = root / rel
        p.parent.mkdir(parents=True, exist_ok=True)
        if not p.exists() or p.read_text() != text:
            p.write_text(text)
            written.append(p)
    return written
