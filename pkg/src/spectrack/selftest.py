"""Built-in verification suites: gradient checks, brute-force oracle
equivalence, normalization invariants, and behavioral checks.

The CLI ``selftest`` command runs everything here; the pytest acceptance
module drives the same functions at the contractual instance counts.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from . import oracles, sam
from .backbone import SpatialSpectralBlock, SpatialSpectralConv
from .data import BoundingBox
from .fusion import SpectralAttentionFusion
from .gradcheck import fd_check, module_fd_check, sample_kink_free
from .heads import (CorrelationTower, SpectralAngleBranch,
                    cosine_similarity_map, dw_xcorr, map_points)
from .losses import assign_regions, cls_loss, loc_loss, saal
from .metrics import precision_dp20, success_auc
from .model import EnsembleWeights, ensemble, peak_location
from .heads import PredictionMaps

GRAD_TOL = 1e-4
GRAD_STEP = 1e-3
GRAD_SEEDS = 5
ORACLE_TOL = 1e-6
LINALG_TOL = 1e-8


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str = ""

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"[{status}] {self.name}" + (f" ({self.detail})" if self.detail else "")


def _max_abs_rel(a, b) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    scale = max(1.0, float(np.abs(a).max(initial=0.0)), float(np.abs(b).max(initial=0.0)))
    return float(np.abs(a - b).max(initial=0.0)) / scale


# ---------------------------------------------------------------------------
# Gradient suite
# ---------------------------------------------------------------------------


def _randomize_bn(module, seed):
    """Non-trivial frozen statistics so eval-mode BN is a real affine map.

    Gradient checks run modules in eval mode: train-mode BN centers
    pre-activations at zero, which parks them on the ReLU kink and breaks
    finite differences for reasons unrelated to the gradients under test.
    """
    gen = torch.Generator().manual_seed(seed + 99)
    with torch.no_grad():
        for m in module.modules():
            if isinstance(m, torch.nn.modules.batchnorm._BatchNorm):
                m.running_mean.copy_(0.3 * torch.randn(m.running_mean.shape, generator=gen))
                m.running_var.copy_(0.5 + torch.rand(m.running_var.shape, generator=gen))
                m.weight.copy_(0.8 + 0.4 * torch.rand(m.weight.shape, generator=gen))
                m.bias.copy_(0.3 * torch.randn(m.bias.shape, generator=gen))
    module.eval()
    return module


def _grad_case_s2c(seed):
    torch.manual_seed(seed)
    mod = SpatialSpectralConv(3, 4, stride=1, spectral_filters=2, bias=True)
    x = torch.randn(1, 3, 5, 5, dtype=torch.float64)
    return module_fd_check(mod, [x], step=GRAD_STEP, tol=GRAD_TOL, readout_seed=seed)


def _sample_randn(shapes):
    def sampler(s):
        gen = torch.Generator().manual_seed(s)
        return [torch.randn(*shape, generator=gen, dtype=torch.float64) for shape in shapes]

    return sampler


def _grad_case_s2cb(seed):
    torch.manual_seed(seed)
    mod = _randomize_bn(SpatialSpectralBlock(3, 4, stride=2, spectral_filters=2), seed).double()
    inputs = sample_kink_free(mod, _sample_randn([(1, 3, 6, 6)]), seed)
    return module_fd_check(mod, inputs, step=GRAD_STEP, tol=GRAD_TOL, readout_seed=seed)


def _grad_case_safm(seed):
    torch.manual_seed(seed)
    mod = SpectralAttentionFusion(6, kernel_size=5)
    r = torch.randn(1, 6, 4, 4, dtype=torch.float64)
    h = torch.randn(1, 6, 4, 4, dtype=torch.float64)
    return module_fd_check(mod, [r, h], step=GRAD_STEP, tol=GRAD_TOL,
                           readout_seed=seed, output_index=0)


def _grad_case_saa(seed):
    torch.manual_seed(seed)
    mod = SpectralAngleBranch(4, 3)
    fz = torch.randn(1, 4, 3, 3, dtype=torch.float64)
    fx = torch.randn(1, 4, 5, 5, dtype=torch.float64)
    return module_fd_check(mod, [fz, fx], step=GRAD_STEP, tol=GRAD_TOL,
                           readout_seed=seed, output_index=0)


def _grad_case_cls_head(seed):
    torch.manual_seed(seed)
    mod = _randomize_bn(CorrelationTower(4, 5, 2), seed).double()
    inputs = sample_kink_free(mod, _sample_randn([(1, 4, 3, 3), (1, 4, 5, 5)]), seed)
    return module_fd_check(mod, inputs, step=GRAD_STEP, tol=GRAD_TOL, readout_seed=seed)


def _grad_case_loc_head(seed):
    torch.manual_seed(seed)
    mod = _randomize_bn(CorrelationTower(4, 5, 4), seed).double()
    inputs = sample_kink_free(mod, _sample_randn([(1, 4, 3, 3), (1, 4, 5, 5)]), seed)

    def fn(z, x):
        return torch.exp(mod(z, x)) * 4.0

    named = [(n, p) for n, p in mod.named_parameters()]
    return fd_check(fn, inputs, params=[p for _, p in named],
                    names=["fz", "fx"] + [n for n, _ in named],
                    step=GRAD_STEP, tol=GRAD_TOL, readout_seed=seed)


def _fixed_labels(map_hw):
    h, w = map_hw
    gt = BoundingBox.from_center((w - 1) / 2.0, (h - 1) / 2.0, w * 0.7, h * 0.7)
    return gt, assign_regions(gt, map_hw)


def _grad_case_saal(seed):
    torch.manual_seed(seed)
    ez = torch.nn.Conv2d(4, 3, 1).double()
    ex = torch.nn.Conv2d(4, 3, 1).double()
    fz = torch.randn(1, 4, 3, 3, dtype=torch.float64)
    fx = torch.randn(1, 4, 7, 7, dtype=torch.float64)
    _, labels = _fixed_labels((5, 5))

    def fn(z, x):
        cos = cosine_similarity_map(ez(z)[0], ex(x)[0])
        pos = cos[labels.pos_set[:, 0], labels.pos_set[:, 1]]
        neg = cos[labels.neg_set[:, 0], labels.neg_set[:, 1]]
        loss, _ = saal(pos, neg)
        return loss

    named = list(ez.named_parameters()) + list(ex.named_parameters())
    return fd_check(fn, [fz, fx], params=[p for _, p in named],
                    names=["fz", "fx", "ez.w", "ez.b", "ex.w", "ex.b"],
                    step=GRAD_STEP, tol=GRAD_TOL, readout_seed=seed)


def _grad_case_ce(seed):
    torch.manual_seed(seed)
    logits = torch.randn(2, 5, 5, dtype=torch.float64)
    _, labels = _fixed_labels((5, 5))
    return fd_check(lambda m: cls_loss(m, labels), [logits], names=["logits"],
                    step=GRAD_STEP, tol=GRAD_TOL, readout_seed=seed)


def _grad_case_iou_loss(seed):
    torch.manual_seed(seed)
    hw = (5, 5)
    gt, labels = _fixed_labels(hw)
    pts = map_points(hw, 1, hw[0] - 1)
    # offsets around the target's own extents keep IoU well inside (0, 1)
    base = torch.tensor([gt.w / 2, gt.h / 2, gt.w / 2, gt.h / 2], dtype=torch.float64)
    m_loc = base[:, None, None] * (1.0 + 0.2 * torch.rand(4, *hw, dtype=torch.float64))
    return fd_check(lambda m: loc_loss(m, gt, labels, pts), [m_loc], names=["m_loc"],
                    step=GRAD_STEP, tol=GRAD_TOL, readout_seed=seed)


def _grad_case_ensemble(seed):
    torch.manual_seed(seed)
    w = EnsembleWeights().double()
    maps = [torch.randn(1, c, 4, 4, dtype=torch.float64) for c in (2, 4, 2, 4)]

    def fn(hs_cls, hs_loc, rgb_cls, rgb_loc):
        out = ensemble(
            PredictionMaps(cls=hs_cls, loc=hs_loc, saa=None),
            PredictionMaps(cls=rgb_cls, loc=rgb_loc, saa=None),
            w,
        )
        return torch.cat([out.cls.flatten(), out.loc.flatten()])

    return fd_check(fn, maps, params=[w.lambda1, w.lambda2],
                    names=["hs_cls", "hs_loc", "rgb_cls", "rgb_loc", "lambda1", "lambda2"],
                    step=GRAD_STEP, tol=GRAD_TOL, readout_seed=seed)


GRAD_CASES = {
    "s2c": _grad_case_s2c,
    "s2cb": _grad_case_s2cb,
    "safm": _grad_case_safm,
    "saa": _grad_case_saa,
    "cls_head": _grad_case_cls_head,
    "loc_head": _grad_case_loc_head,
    "saal": _grad_case_saal,
    "cross_entropy": _grad_case_ce,
    "iou_loss": _grad_case_iou_loss,
    "ensemble": _grad_case_ensemble,
}


def gradient_suite(seeds: int = GRAD_SEEDS) -> list[CheckResult]:
    results = []
    for name, case in GRAD_CASES.items():
        worst = 0.0
        for seed in range(seeds):
            res = case(seed)
            worst = max(worst, res.max_rel_err)
        results.append(
            CheckResult(
                name=f"grad/{name}",
                passed=worst < GRAD_TOL,
                detail=f"max rel err {worst:.3e} over {seeds} seeds (tol {GRAD_TOL:.0e})",
            )
        )
    return results


# ---------------------------------------------------------------------------
# Oracle suite
# ---------------------------------------------------------------------------


def _oracle_dw_xcorr(rng, instances):
    worst = 0.0
    for _ in range(instances):
        c = int(rng.integers(1, 9))
        hz, wz = int(rng.integers(1, 6)), int(rng.integers(1, 6))
        hx, wx = int(rng.integers(hz, 10)), int(rng.integers(wz, 10))
        z = rng.standard_normal((c, hz, wz))
        x = rng.standard_normal((c, hx, wx))
        ours = dw_xcorr(torch.from_numpy(z), torch.from_numpy(x)).numpy()
        ref = oracles.dw_xcorr_naive(z, x)
        worst = max(worst, _max_abs_rel(ours, ref))
    return worst


def _oracle_safm(rng, instances):
    worst = 0.0
    for k in range(instances):
        c = int(rng.integers(2, 17))
        h, w = int(rng.integers(1, 9)), int(rng.integers(1, 9))
        torch.manual_seed(int(rng.integers(0, 2**31)))
        mod = SpectralAttentionFusion(c, kernel_size=5).double()
        r = rng.standard_normal((c, h, w))
        hs = rng.standard_normal((c, h, w))
        fused, _ = mod(torch.from_numpy(r)[None], torch.from_numpy(hs)[None])
        ref, _, _ = oracles.safm_fuse_naive(
            r, hs,
            mod.intra_conv.weight.detach().numpy().reshape(-1),
            mod.intra_conv.bias.item(),
            mod.inter_conv.weight.detach().numpy().reshape(-1),
            mod.inter_conv.bias.item(),
        )
        worst = max(worst, _max_abs_rel(fused[0].detach().numpy(), ref))
    return worst


def _oracle_sam(rng, instances):
    worst = 0.0
    for _ in range(instances):
        h, w = int(rng.integers(2, 9)), int(rng.integers(2, 9))
        c = int(rng.integers(2, 9))
        cube = rng.standard_normal((h, w, c))
        target = rng.standard_normal(c)
        model = sam.sam_fit(cube, target)
        # covariance against the explicit outer-product sum
        ref_m = oracles.covariance_naive(cube.reshape(h * w, c).astype(np.float64))
        worst = max(worst, _max_abs_rel(model.mapping, ref_m))
        # pseudo-inverse-sqrt: P = W M W must be a symmetric idempotent that
        # acts as identity on range(M)
        p = model.mapping_inv_sqrt @ model.mapping @ model.mapping_inv_sqrt
        worst = max(worst, _max_abs_rel(p, p.T))
        worst = max(worst, _max_abs_rel(p @ p, p))
        worst = max(worst, _max_abs_rel(p @ model.mapping, model.mapping))
        # score at a random pixel against the scalar-loop whitened cosine
        i, j = int(rng.integers(0, h)), int(rng.integers(0, w))
        ref_score = oracles.whitened_cosine_naive(
            model.mapping_inv_sqrt, cube[i, j].astype(np.float64), target
        )
        worst = max(worst, abs(sam.sam_score(model, (i, j)) - ref_score))
        worst = max(worst, abs(sam.sam_score_map(model)[i, j] - ref_score))
    return worst


def _oracle_assign_regions(rng, instances):
    mismatches = 0
    for _ in range(instances):
        h, w = int(rng.integers(3, 26)), int(rng.integers(3, 26))
        cx = float(rng.uniform(-2, w + 1))
        cy = float(rng.uniform(-2, h + 1))
        bw = float(rng.uniform(0.5, w))
        bh = float(rng.uniform(0.5, h))
        gt = BoundingBox.from_center(cx, cy, bw, bh)
        ours = assign_regions(gt, (h, w)).label
        ref = oracles.assign_regions_naive((cx, cy), (bw, bh), (h, w))
        if not np.array_equal(ours, ref):
            mismatches += 1
    return mismatches


def _oracle_success(rng, instances):
    worst = 0.0
    for _ in range(instances):
        n = int(rng.integers(1, 200))
        ious = rng.uniform(0, 1, n)
        curve, auc = success_auc(ious)
        ref_curve, ref_auc = oracles.success_auc_naive(list(ious))
        worst = max(worst, _max_abs_rel(curve, ref_curve), abs(auc - ref_auc))
    return worst


def _oracle_precision(rng, instances):
    worst = 0.0
    for _ in range(instances):
        n = int(rng.integers(1, 200))
        errs = rng.uniform(0, 60, n)
        curve, dp = precision_dp20(errs)
        ref_curve, ref_dp = oracles.precision_naive(list(errs))
        worst = max(worst, _max_abs_rel(curve, ref_curve), abs(dp - ref_dp))
    return worst


def oracle_suite(instances: int = 100, seed: int = 0) -> list[CheckResult]:
    rng = np.random.default_rng(seed)
    results = []
    for name, fn, tol in [
        ("dw_xcorr", _oracle_dw_xcorr, ORACLE_TOL),
        ("safm_fuse", _oracle_safm, ORACLE_TOL),
        ("sam", _oracle_sam, LINALG_TOL),
        ("success_auc", _oracle_success, 1e-12),
        ("precision_dp20", _oracle_precision, 1e-12),
    ]:
        worst = fn(rng, instances)
        results.append(
            CheckResult(
                name=f"oracle/{name}",
                passed=worst < tol,
                detail=f"max err {worst:.3e} over {instances} instances (tol {tol:.0e})",
            )
        )
    mism = _oracle_assign_regions(rng, instances)
    results.append(
        CheckResult(
            name="oracle/assign_regions",
            passed=mism == 0,
            detail=f"{mism} mismatching label maps of {instances}",
        )
    )
    return results


# ---------------------------------------------------------------------------
# Invariant suite
# ---------------------------------------------------------------------------


def invariant_suite(instances: int = 50, seed: int = 0) -> list[CheckResult]:
    rng = np.random.default_rng(seed)
    results = []

    worst_sum = 0.0
    gate_ok = True
    for _ in range(instances):
        c = int(rng.integers(2, 17))
        torch.manual_seed(int(rng.integers(0, 2**31)))
        mod = SpectralAttentionFusion(c).double()
        r = torch.from_numpy(rng.standard_normal((1, c, 3, 3)))
        h = torch.from_numpy(rng.standard_normal((1, c, 3, 3)))
        _, state = mod(r, h)
        col_sums = state.inter_weights.sum(dim=1).detach().numpy()
        worst_sum = max(worst_sum, float(np.abs(col_sums - 1.0).max()))
        for gates in (state.rgb_intra_weights, state.hs_intra_weights):
            g = gates.detach().numpy()
            gate_ok = gate_ok and bool(np.all((g > 0.0) & (g < 1.0)))
    results.append(
        CheckResult(
            "invariant/safm_softmax_columns",
            worst_sum < 1e-6,
            f"max |sum-1| {worst_sum:.3e}",
        )
    )
    results.append(CheckResult("invariant/safm_sigmoid_range", gate_ok, "gates in (0,1)"))

    worst_range = 0.0
    worst_scale = 0.0
    for _ in range(instances):
        h, w = int(rng.integers(2, 8)), int(rng.integers(2, 8))
        c = int(rng.integers(2, 7))
        cube = rng.standard_normal((h, w, c))
        i, j = int(rng.integers(0, h)), int(rng.integers(0, w))
        target = cube[i, j] + 0.1 * rng.standard_normal(c)
        model = sam.sam_fit(cube, target)
        scores = sam.sam_score_map(model)
        worst_range = max(worst_range, float(np.abs(scores).max()) - 1.0)
        s = float(rng.uniform(0.1, 10.0))
        scaled = sam.sam_fit(s * cube, s * target)
        worst_scale = max(
            worst_scale, float(np.abs(sam.sam_score_map(scaled) - scores).max())
        )
    results.append(
        CheckResult(
            "invariant/sam_score_range",
            worst_range <= 1e-9,
            f"max |score|-1 = {worst_range:.3e}",
        )
    )
    results.append(
        CheckResult(
            "invariant/sam_scale_invariance",
            worst_scale < 1e-9,
            f"max score drift under scaling {worst_scale:.3e}",
        )
    )
    return results


# ---------------------------------------------------------------------------
# Behavior suite
# ---------------------------------------------------------------------------


def saal_descent_check(seed: int = 0, steps: int = 50, lr: float = 0.05,
                       momentum: float = 0.9):
    """Optimize only the embedding layers against the similarity-separation
    loss on frozen features; returns the loss trace and cosine means."""
    torch.manual_seed(seed)
    fz = torch.randn(8, 3, 3, dtype=torch.float64)
    fx = torch.randn(8, 9, 9, dtype=torch.float64)
    ez = torch.nn.Conv2d(8, 4, 1).double()
    ex = torch.nn.Conv2d(8, 4, 1).double()
    _, labels = _fixed_labels((7, 7))
    opt = torch.optim.SGD(list(ez.parameters()) + list(ex.parameters()),
                          lr=lr, momentum=momentum)

    def means():
        cos = cosine_similarity_map(ez(fz[None])[0], ex(fx[None])[0])
        pos = cos[labels.pos_set[:, 0], labels.pos_set[:, 1]]
        neg = cos[labels.neg_set[:, 0], labels.neg_set[:, 1]]
        return pos, neg

    trace = []
    pos0, neg0 = (float(v.mean()) for v in means())
    for _ in range(steps):
        pos, neg = means()
        loss, _ = saal(pos, neg)
        opt.zero_grad()
        loss.backward()
        opt.step()
        trace.append(float(loss))
    pos1, neg1 = (float(v.mean()) for v in means())
    return trace, (pos0, pos1), (neg0, neg1)


def behavior_suite(seed: int = 0) -> list[CheckResult]:
    results = []

    trace, (pos0, pos1), (neg0, neg1) = saal_descent_check(seed)
    rises = sum(1 for a, b in zip(trace, trace[1:]) if b > a + 1e-12)
    results.append(
        CheckResult(
            "behavior/saal_descent",
            rises <= 2 and pos1 > pos0 and neg1 < neg0,
            f"{rises} non-monotone steps; pos {pos0:.3f}->{pos1:.3f}, "
            f"neg {neg0:.3f}->{neg1:.3f}",
        )
    )

    torch.manual_seed(seed)
    hs = PredictionMaps(cls=torch.randn(1, 2, 5, 5), loc=torch.rand(1, 4, 5, 5) + 0.1,
                        saa=torch.randn(1, 1, 5, 5))
    rgb = PredictionMaps(cls=torch.randn(1, 2, 5, 5), loc=torch.rand(1, 4, 5, 5) + 0.1)
    w10 = EnsembleWeights()
    with torch.no_grad():
        w10.lambda1.fill_(1.0)
        w10.lambda2.fill_(0.0)
    out = ensemble(hs, rgb, w10)
    hs_only = bool(torch.equal(out.cls, hs.cls) and torch.equal(out.loc, hs.loc)
                   and torch.equal(out.saa, hs.saa))
    results.append(CheckResult("behavior/ensemble_unit_weights", hs_only,
                               "lambda=(1,0) reproduces HS maps exactly"))

    resp = torch.rand(9, 9)
    peaks = {peak_location(resp * s) for s in (1e-6, 0.5, 1.0, 3.0, 1e6)}
    results.append(CheckResult("behavior/argmax_scale_invariance", len(peaks) == 1,
                               f"peaks under positive scaling: {peaks}"))

    rng = np.random.default_rng(seed)
    gt = [BoundingBox(float(x), float(y), 10.0, 8.0)
          for x, y in rng.integers(5, 50, size=(40, 2))]
    res = None
    from .metrics import evaluate_sequence
    res = evaluate_sequence(gt, gt)
    exact = abs(res.auc - 20.0 / 21.0) < 1e-12 and res.dp20 == 1.0
    disjoint = [BoundingBox(b.x + 1000.0, b.y + 1000.0, b.w, b.h) for b in gt]
    res2 = evaluate_sequence(disjoint, gt)
    results.append(
        CheckResult(
            "behavior/metric_fixed_points",
            exact and res2.auc == 0.0,
            f"gt-as-pred auc={res.auc:.12f} dp20={res.dp20}; disjoint auc={res2.auc}",
        )
    )
    return results


def run_selftest(grad_seeds: int = GRAD_SEEDS, oracle_instances: int = 100,
                 invariant_instances: int = 50, seed: int = 0):
    """All suites; returns (results, all_passed)."""
    results = []
    results += gradient_suite(grad_seeds)
    results += oracle_suite(oracle_instances, seed)
    results += invariant_suite(invariant_instances, seed)
    results += behavior_suite(seed)
    return results, all(r.passed for r in results)
