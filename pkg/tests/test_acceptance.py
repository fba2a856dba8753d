"""The eight shipping gates, one test per criterion.

Each test prints a single ``[criterion N] ... PASS/FAIL`` line with the
measured numbers and its pinned tolerance, then asserts.  Criterion 5
trains the desk-scale model to memorization and dominates the runtime
(about ten minutes on one CPU core); everything else is seconds.
"""

import time

import numpy as np

from gvtnet.adjacency import (AdjacencyConfig, AdjacencySet, build_adjacency,
                              minkowski_distance, update_adjacency)
from gvtnet.attention import (NEG_MASK, graph_window_attention,
                              swin_window_attention)
from gvtnet.checkpoint import load_checkpoint, save_checkpoint
from gvtnet.cli import main
from gvtnet.data import fixture_images, make_pairs
from gvtnet.gradcheck import grad_check
from gvtnet.metrics import (dihedral, dihedral_inverse, psnr, self_ensemble,
                            ssim, to_luma)
from gvtnet.model import GVTNet, NetConfig, TransformerLayer
from gvtnet.tensor import Tensor
from gvtnet.training import TrainConfig, l1_loss, overfit_check, train
from oracles import attn_oracle_2d, ssim_reference

TOY = dict(n_groups=1, n_blocks=1, channels=8, window=4, heads=2, scale=2)


def _report(num: int, name: str, passed: bool, detail: str) -> None:
    verdict = "PASS" if passed else "FAIL"
    line = f"[criterion {num}] {name}: {verdict} ({detail})"
    print(line)
    assert passed, line


def test_criterion_1_gradient_integrity():
    t0 = time.monotonic()
    model = GVTNet(NetConfig(**TOY), seed=0)
    rng = np.random.default_rng(0)
    x = Tensor(rng.uniform(0.1, 0.9, size=(1, 3, 8, 8)))
    target = Tensor(rng.uniform(0.1, 0.9, size=(1, 3, 16, 16)))
    report = grad_check(lambda: l1_loss(model(x), target),
                        list(model.named_parameters()),
                        eps=1e-5, tol=1e-4, max_elems_per_tensor=64, seed=0)
    wall = time.monotonic() - t0
    _report(1, "gradient integrity",
            report.passed and report.max_rel_err < 1e-4 and wall < 300.0,
            f"max rel err {report.max_rel_err:.2e} < 1e-4 over "
            f"{sum(e.n_checked for e in report.entries)} sampled elements, "
            f"eps 1e-5, {wall:.0f}s < 300s")


def test_criterion_2_attention_oracle_equivalence():
    rng = np.random.default_rng(2)
    worst = 0.0
    for _ in range(100):
        d = int(rng.integers(1, 6))
        q, k, v = (rng.standard_normal((1, 1, 3, d)) for _ in range(3))
        adj = (rng.random((3, 3)) > 0.5).astype(float)
        adj = np.maximum(np.maximum(adj, adj.T), np.eye(3))
        bias = rng.standard_normal((1, 3, 3))
        mask = np.where(rng.random((1, 1, 3, 3)) > 0.7, NEG_MASK, 0.0)
        tq, tk, tv = Tensor(q), Tensor(k), Tensor(v)

        got = graph_window_attention(tq, tk, tv, adj, "hadamard").data[0, 0]
        want = attn_oracle_2d(q[0, 0], k[0, 0], v[0, 0], mul=adj)
        worst = max(worst, float(np.abs(got - want).max()))

        got = graph_window_attention(tq, tk, tv, adj, "additive").data[0, 0]
        want = attn_oracle_2d(q[0, 0], k[0, 0], v[0, 0],
                              add=np.where(adj == 0, NEG_MASK, 0.0))
        worst = max(worst, float(np.abs(got - want).max()))

        got = swin_window_attention(tq, tk, tv, Tensor(bias), mask).data[0, 0]
        want = attn_oracle_2d(q[0, 0], k[0, 0], v[0, 0],
                              add=bias[0] + mask[0, 0])
        worst = max(worst, float(np.abs(got - want).max()))
    _report(2, "attention oracle equivalence", worst <= 1e-10,
            f"100 random M=3 cases, both kernels; max abs dev "
            f"{worst:.2e} <= 1e-10")


def test_criterion_3_degenerate_mask_equivalence():
    rng = np.random.default_rng(3)
    x = rng.uniform(-1.0, 1.0, size=(1, 8, 8, 8))
    all_ones = AdjacencySet(matrices=np.ones((4, 16, 16)), window=4,
                            batch=1, grid_h=2, grid_w=2)
    worst = 0.0
    for mode in ("hadamard", "additive"):
        cfg = NetConfig(**TOY, gvt_mask_mode=mode)
        stl = TransformerLayer(cfg, "stl", 0, np.random.default_rng(30))
        gvtl = TransformerLayer(cfg, "gvtl", 0, np.random.default_rng(31))
        shared = dict(stl.named_parameters())
        for name, p in gvtl.named_parameters():
            p.data[...] = shared[name].data
        assert not stl.attn.bias_table.data.any()  # bias term is zero
        out_stl = stl(Tensor(x)).data
        out_gvtl = gvtl(Tensor(x), all_ones).data
        worst = max(worst, float(np.abs(out_stl - out_gvtl).max()))
    _report(3, "degenerate-mask equivalence", worst <= 1e-12,
            f"all-ones adjacency, zero bias, zero shift, shared weights; "
            f"max abs dev {worst:.2e} <= 1e-12, both mask modes")


def test_criterion_4_adjacency_laws():
    rng = np.random.default_rng(4)
    violations = 0

    # Distance-order law on 1000 random token pairs.
    for _ in range(1000):
        a = rng.standard_normal(16)
        b = rng.standard_normal(16)
        d1 = minkowski_distance(a, b, 1.0)
        d2 = minkowski_distance(a, b, 2.0)
        dinf = minkowski_distance(a, b, np.inf)
        if not (dinf <= d2 <= d1):
            violations += 1

    # Symmetry and binarity of built matrices, both comparison modes.
    for comparison in ("gt", "lt"):
        cfg = AdjacencyConfig(comparison=comparison)
        for _ in range(10):
            feats = rng.standard_normal((1, 6, 8, 8))
            mats = update_adjacency(feats, 4, cfg).matrices
            if not np.array_equal(mats, mats.transpose(0, 2, 1)):
                violations += 1
            if not np.isin(mats, (0.0, 1.0)).all():
                violations += 1

    # A distance exactly at T never links, in either mode (strict).
    tie = np.array([[0.0, 0.75], [0.75, 0.0]])
    for comparison in ("gt", "lt"):
        cfg = AdjacencyConfig(threshold=0.75, comparison=comparison,
                              self_loops=False)
        if build_adjacency(tie, cfg)[0, 1] != 0.0:
            violations += 1

    # Raising T in above-threshold mode never adds an edge.
    for _ in range(20):
        d = rng.uniform(0.0, 1.5, size=(16, 16))
        d = np.triu(d, 1) + np.triu(d, 1).T
        mats = [build_adjacency(d, AdjacencyConfig(threshold=t))
                for t in (0.60, 0.75, 0.85)]
        if not ((mats[1] <= mats[0]).all() and (mats[2] <= mats[1]).all()):
            violations += 1

    _report(4, "adjacency laws", violations == 0,
            f"{violations} violations across distance ordering (1000 pairs), "
            f"symmetry/binarity, strict ties, T-monotonicity")


def test_criterion_5_overfit_harness(tmp_path):
    t0 = time.monotonic()
    report = overfit_check()  # desk-scale x2 model, 2000-step budget
    wall = time.monotonic() - t0

    losses = np.array([float(line.split(",")[1]) for line in report.trace])
    window = 500
    means = [losses[i:i + window].mean()
             for i in range(0, len(losses) - window + 1, window)]
    monotone = all(b < a for a, b in zip(means, means[1:]))

    ablations = [
        ["--no-stl"],
        ["--plain-qkv"],
        ["--mask-mode", "additive"],
        ["--mask-mode", "hadamard"],
        ["--threshold", "0.60"], ["--threshold", "0.75"],
        ["--threshold", "0.85"],
        ["--minkowski-p", "1"], ["--minkowski-p", "2"],
        ["--minkowski-p", "inf"],
    ]
    failed = []
    for i, extra in enumerate(ablations):
        argv = ["train", "--fixtures", "--steps", "8", "--channels", "8",
                "--groups", "1", "--blocks", "1",
                "--out", str(tmp_path / f"ablation_{i}")] + extra
        if main(argv) != 0:
            failed.append(" ".join(extra))

    _report(5, "overfit harness",
            report.passed and report.steps_run <= 2000 and wall < 1800.0
            and monotone and not failed,
            f"{report.final_psnr:.2f} dB >= 35 at step {report.steps_run} "
            f"<= 2000, wall {wall:.0f}s < 1800s, {len(means)}-window loss "
            f"means strictly decreasing, {len(ablations)} ablation configs "
            f"trained clean" + (f"; failed: {failed}" if failed else ""))


def test_criterion_6_metric_correctness():
    rng = np.random.default_rng(6)
    base = rng.uniform(0.0, 0.8, size=(3, 32, 32))
    p = psnr(base, base + 0.1)
    psnr_ok = abs(p - 20.0) <= 0.01

    img = rng.random((3, 24, 24))
    self_ok = ssim(img, img) == 1.0  # bitwise, not approximately

    other = np.clip(img + rng.normal(0.0, 0.08, size=img.shape), 0.0, 1.0)
    got = ssim(img, other)
    want = ssim_reference(to_luma(img), to_luma(other))
    ref_dev = abs(got - want)

    _report(6, "metric correctness",
            psnr_ok and self_ok and ref_dev <= 1e-9,
            f"const-diff 0.1 -> {p:.4f} dB (20.00 +/- 0.01), self-SSIM "
            f"{'exactly 1.0' if self_ok else 'NOT 1.0'}, reference dev "
            f"{ref_dev:.2e} <= 1e-9")


def test_criterion_7_self_ensemble_fixed_point():
    def stub(img):
        return np.repeat(np.repeat(img, 2, axis=-2), 2, axis=-1)

    rng = np.random.default_rng(7)
    img = rng.random((3, 12, 12))
    dev = float(np.abs(self_ensemble(stub, img) - stub(img)).max())

    wide = rng.random((3, 9, 7))  # non-square catches axis mixups
    bad_round_trips = sum(
        not np.array_equal(dihedral_inverse(dihedral(wide, k), k), wide)
        for k in range(8))

    _report(7, "self-ensemble fixed point",
            dev <= 1e-12 and bad_round_trips == 0,
            f"equivariant stub dev {dev:.2e} <= 1e-12, "
            f"{8 - bad_round_trips}/8 transforms round-trip exactly")


def test_criterion_8_determinism(tmp_path):
    cfg = NetConfig(**TOY)
    tcfg = TrainConfig(steps=12, seed=7)
    pairs = make_pairs(fixture_images(), cfg.scale, seed=tcfg.seed)
    for run in ("a", "b"):
        train(pairs, GVTNet(cfg, seed=tcfg.seed), tcfg,
              out_dir=str(tmp_path / run))
    csv_a = (tmp_path / "a" / "loss.csv").read_bytes()
    csv_b = (tmp_path / "b" / "loss.csv").read_bytes()

    first = tmp_path / "a" / "model.gvtn"
    model, leftover = load_checkpoint(str(first))
    resaved = tmp_path / "resaved.gvtn"
    save_checkpoint(str(resaved), model, leftover)
    bits_ok = first.read_bytes() == resaved.read_bytes()

    _report(8, "determinism", csv_a == csv_b and bits_ok,
            f"two seeded runs: loss CSVs {'byte-identical' if csv_a == csv_b else 'DIFFER'}; "
            f"checkpoint round-trip {'bit-exact' if bits_ok else 'DIFFERS'}")
