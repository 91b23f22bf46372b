"""Central finite-difference verification of autograd gradients.

A check evaluates a tensor-valued function under a fixed random linear
readout, compares the autograd gradient of every input and parameter against
central differences (default step 1e-3 in float64), and reports the worst
vector-norm relative error.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import torch

DEFAULT_STEP = 1e-3
DEFAULT_TOL = 1e-4


@dataclass
class GradCheckResult:
    max_rel_err: float
    tol: float
    per_tensor: dict[str, float] = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return self.max_rel_err < self.tol


def _norm_rel_err(a: torch.Tensor, b: torch.Tensor) -> float:
    na, nb = float(a.norm()), float(b.norm())
    denom = max(na, nb)
    if denom < 1e-12:
        return 0.0
    return float((a - b).norm()) / denom


def fd_check(fn, inputs, params=(), names=None, step=DEFAULT_STEP, tol=DEFAULT_TOL,
             readout_seed=1234) -> GradCheckResult:
    """Check d(readout(fn(*inputs)))/d(tensor) for every input and parameter.

    ``inputs`` are float64 leaf tensors; ``params`` additional tensors the
    function closes over (module parameters). All must be float64 for the
    stated tolerances to be meaningful.
    """
    inputs = [t.detach().clone().requires_grad_(True) for t in inputs]
    params = list(params)

    gen = torch.Generator().manual_seed(readout_seed)
    probe = {}

    def readout(out):
        if isinstance(out, (tuple, list)):
            out = out[0]
        if "w" not in probe:
            probe["w"] = torch.rand(out.shape, generator=gen, dtype=out.dtype)
        return (out * probe["w"]).sum()

    loss = readout(fn(*inputs))
    tensors = inputs + [p for p in params if p.requires_grad]
    grads = torch.autograd.grad(loss, tensors, allow_unused=True)

    def eval_loss() -> float:
        with torch.no_grad():
            return float(readout(fn(*inputs)))

    result = GradCheckResult(max_rel_err=0.0, tol=tol)
    for idx, (t, g) in enumerate(zip(tensors, grads)):
        analytic = torch.zeros_like(t) if g is None else g
        fd = torch.zeros_like(t)
        flat = t.data.view(-1)
        fd_flat = fd.view(-1)
        for i in range(flat.numel()):
            orig = float(flat[i])
            flat[i] = orig + step
            plus = eval_loss()
            flat[i] = orig - step
            minus = eval_loss()
            flat[i] = orig
            fd_flat[i] = (plus - minus) / (2.0 * step)
        err = _norm_rel_err(analytic, fd)
        name = names[idx] if names and idx < len(names) else f"tensor{idx}"
        result.per_tensor[name] = err
        result.max_rel_err = max(result.max_rel_err, err)
    return result


def module_fd_check(module: torch.nn.Module, inputs, step=DEFAULT_STEP, tol=DEFAULT_TOL,
                    readout_seed=1234, output_index=None) -> GradCheckResult:
    """fd_check over a module's inputs and all trainable parameters."""
    module = module.double()

    def fn(*args):
        out = module(*args)
        if output_index is not None:
            out = out[output_index]
        return out

    named = [(n, p) for n, p in module.named_parameters() if p.requires_grad]
    names = [f"input{i}" for i in range(len(inputs))] + [n for n, _ in named]
    return fd_check(
        fn, [t.double() for t in inputs], params=[p for _, p in named],
        names=names, step=step, tol=tol, readout_seed=readout_seed,
    )


def min_relu_preactivation(module: torch.nn.Module, inputs) -> float:
    """Smallest |value| entering any ReLU of the module for these inputs."""
    closest = [float("inf")]
    hooks = []
    for m in module.modules():
        if isinstance(m, torch.nn.ReLU):
            hooks.append(
                m.register_forward_hook(
                    lambda mod, args, out: closest.__setitem__(
                        0, min(closest[0], float(args[0].abs().min()))
                    )
                )
            )
    try:
        with torch.no_grad():
            module(*inputs)
    finally:
        for h in hooks:
            h.remove()
    return closest[0]


def sample_kink_free(module, sampler, base_seed, margin=3e-3, max_tries=50):
    """Draw inputs until no ReLU pre-activation lies within ``margin`` of its
    kink, so central differences stay on one linear piece.

    ``sampler(seed)`` returns a fresh input list; draws are deterministic in
    ``base_seed``. Falls back to the last draw if no clear one appears.
    """
    inputs = None
    for k in range(max_tries):
        inputs = sampler(base_seed + 7919 * k)
        if min_relu_preactivation(module, inputs) > margin:
            return inputs
    return inputs
