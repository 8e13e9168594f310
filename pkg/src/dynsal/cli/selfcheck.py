"""Oracle self-checks run by ``dynsal selfcheck``.

Each suite draws seeded instances and compares the library against a
brute-force or closed-form oracle. A failed property records the suite, the
seed and the instance index, so ``run_selfcheck(seed, instances)`` replays it.
The library modules are looked up at call time (``losses.kl_div`` rather than
an imported name) so a patched function is what gets checked.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from dynsal import losses
from dynsal.data.dataset import ImageBatch
from dynsal.metrics import scores
from dynsal.model import network
from dynsal.model.params import GATES, PEEPHOLE_GATES, ModelConfig, ModelParams, init_params
from dynsal.tensor import ops
from dynsal.tensor.core import Tensor
from dynsal.tensor.gradcheck import gradcheck
from dynsal.train import optim, trainer

logger = logging.getLogger(__name__)

METRIC_TOLERANCE = 1e-9
LOSS_TOLERANCE = 1e-6
LSTM_TOLERANCE = 1e-10

# Instances per suite at full strength; ``instances`` caps every suite.
SUITE_INSTANCES = {
    "tensor-gradients": 50,
    "metric-oracles": 200,
    "convlstm-oracle": 100,
    "loss-closed-forms": 50,
    "attention-contracts": 100,
    "training-contracts": 4,
}

TINY_MODEL = ModelConfig(
    input_size=32,
    encoder_widths=(2, 2, 2),
    attention_widths=(2, 2),
    hidden_channels=2,
)

# Feature side 8 keeps the pooled attention map above 1x1, so CC is defined.
TRAIN_MODEL = ModelConfig(
    input_size=64,
    encoder_widths=(4, 4, 4),
    attention_widths=(4, 4),
    hidden_channels=2,
)


@dataclass(frozen=True)
class PropertyFailure:
    suite: str
    name: str
    seed: int
    instance: int
    detail: str = ""

    def __str__(self) -> str:
        text = f"{self.suite}: {self.name} (seed={self.seed}, instance={self.instance})"
        return f"{text}: {self.detail}" if self.detail else text


@dataclass
class SuiteResult:
    name: str
    instances: int = 0
    checks: int = 0
    failures: list[PropertyFailure] = field(default_factory=list)
    seed: int = 0

    @property
    def passed(self) -> bool:
        return not self.failures

    def check(self, name: str, ok: bool, instance: int, detail: str = "") -> None:
        self.checks += 1
        if not ok:
            self.failures.append(PropertyFailure(self.name, name, self.seed, instance, detail))

    def close(self, name: str, actual: float, expected: float, tol: float, instance: int) -> None:
        diff = abs(actual - expected)
        self.check(name, bool(diff < tol), instance, f"got {actual!r}, expected {expected!r} (|diff|={diff:.3g})")


@dataclass
class SelfCheckReport:
    seed: int
    suites: list[SuiteResult]

    @property
    def passed(self) -> bool:
        return all(s.passed for s in self.suites)

    @property
    def failures(self) -> list[PropertyFailure]:
        return [f for s in self.suites for f in s.failures]

    def format(self) -> str:
        lines = []
        for s in self.suites:
            status = "PASS" if s.passed else "FAIL"
            lines.append(f"{status} {s.name}: {s.checks} checks over {s.instances} instances")
            lines.extend(f"  {f}" for f in s.failures)
        verdict = "passed" if self.passed else f"failed ({len(self.failures)} properties)"
        lines.append(f"selfcheck {verdict}, seed {self.seed}, {len(self.suites)} suites")
        return "\n".join(lines)


def _rng(seed: int, instance: int) -> np.random.Generator:
    return np.random.default_rng([seed, instance])


def _leaf(rng: np.random.Generator, shape, low: Optional[float] = None, high: Optional[float] = None) -> Tensor:
    if low is None:
        data = rng.normal(size=shape)
    else:
        data = rng.uniform(low, high, size=shape)
    return Tensor(data, requires_grad=True)


def _weighted_total(out: Tensor, weights: np.ndarray) -> Tensor:
    return ops.total(ops.hadamard(out, Tensor(weights)))


# ---------------------------------------------------------------------------
# tensor-gradients
# ---------------------------------------------------------------------------

GradCase = Callable[[np.random.Generator], tuple[Callable[[], Tensor], dict[str, Tensor]]]


def _reduced(build: Callable[[], Tensor], rng: np.random.Generator) -> Callable[[], Tensor]:
    weights = rng.normal(size=build().shape)
    return lambda: _weighted_total(build(), weights)


def _case_conv(rng):
    stride = int(rng.integers(1, 3))
    x, k, b = _leaf(rng, (6, 5, 2)), _leaf(rng, (3, 3, 2, 3)), _leaf(rng, (3,))
    return _reduced(lambda: ops.conv2d(x, k, b, stride=stride, padding=1), rng), {"x": x, "kernel": k, "bias": b}


def _case_pool(rng):
    x = _leaf(rng, (6, 4, 2))
    return _reduced(lambda: ops.max_pool2d(x, 2, 2), rng), {"x": x}


def _case_upsample(rng):
    x = _leaf(rng, (2, 3, 2))
    return _reduced(lambda: ops.upsample_bilinear(x, 4), rng), {"x": x}


def _case_activations(rng):
    x = _leaf(rng, (3, 3, 2))
    return _reduced(lambda: ops.add(ops.sigmoid(x), ops.add(ops.tanh(x), ops.relu(x))), rng), {"x": x}


def _case_channel_pairing(rng):
    a, m, c = _leaf(rng, (3, 4, 3)), _leaf(rng, (3, 4, 1)), _leaf(rng, (3, 4, 3))
    return _reduced(lambda: ops.sub(ops.hadamard(a, m), ops.add(c, m)), rng), {"a": a, "m": m, "c": c}


def _case_div_log_sqrt(rng):
    a, b = _leaf(rng, (3, 3, 1), 0.5, 2.0), _leaf(rng, (3, 3, 1), 0.5, 2.0)
    return _reduced(lambda: ops.add(ops.div(ops.log(a), b), ops.sqrt(b)), rng), {"a": a, "b": b}


def _case_reductions(rng):
    x = _leaf(rng, (3, 4))
    s = Tensor(np.array([rng.uniform(0.5, 2.0)]), requires_grad=True)

    def build() -> Tensor:
        centered = ops.sub(x, ops.mean(x))
        spread = ops.clamp_min(ops.mean(ops.hadamard(centered, centered)), 1e-3)
        return ops.div(ops.mul_scalar(centered, 2.0), ops.add_scalar(ops.hadamard(spread, s), 1.0))

    return _reduced(build, rng), {"x": x, "s": s}


def _case_stack_reshape(rng):
    a, b = _leaf(rng, (2, 3, 1)), _leaf(rng, (2, 3, 1))
    return _reduced(lambda: ops.stack([ops.reshape(a, (3, 2)), ops.reshape(ops.tanh(b), (3, 2))]), rng), {"a": a, "b": b}


def _case_model(rng):
    params = init_params(TINY_MODEL, seed=int(rng.integers(2**31)))
    for name in ("lstm.W_ci", "lstm.W_cf", "lstm.W_co"):
        params[name].data[...] = rng.normal(scale=0.5, size=params[name].shape)
    frames = rng.uniform(size=(2, TINY_MODEL.input_size, TINY_MODEL.input_size, 3))
    side = TINY_MODEL.feature_size
    weights = rng.normal(size=(2, side, side))

    def build() -> Tensor:
        out = network.forward_sequence(frames, params, TINY_MODEL)
        loss = _weighted_total(out.saliency_maps(), weights)
        return ops.add(loss, _weighted_total(out.attention_maps(), weights))

    # Every group is sampled; relu/pool kinks sit far from a 1e-5 step.
    checked = params.group("encoder.", "attention.conv", "attention.score.", "lstm.", "readout.")
    return build, checked


GRAD_CASES: tuple[tuple[str, GradCase], ...] = (
    ("conv2d", _case_conv),
    ("max_pool2d", _case_pool),
    ("upsample_bilinear", _case_upsample),
    ("activations", _case_activations),
    ("channel pairing", _case_channel_pairing),
    ("div/log/sqrt", _case_div_log_sqrt),
    ("reductions", _case_reductions),
    ("stack/reshape", _case_stack_reshape),
    ("two-frame model", _case_model),
)


def check_gradients(result: SuiteResult, count: int) -> None:
    for k in range(count):
        op_name, case = GRAD_CASES[k % len(GRAD_CASES)]
        loss_fn, params = case(_rng(result.seed, k))
        model = op_name == "two-frame model"
        checks = gradcheck(
            loss_fn, params, max_entries=3 if model else None, seed=k, floor=1e-4 if model else 1e-6,
        )
        worst = max(checks, key=lambda c: c.rel_error)
        result.check(
            f"{op_name} gradient matches central differences",
            all(c.passed for c in checks),
            k,
            f"{worst.name}{list(worst.index)}: analytic {worst.analytic:.6g}, numeric {worst.numeric:.6g}",
        )


# ---------------------------------------------------------------------------
# metric-oracles
# ---------------------------------------------------------------------------

def _pair_oracle(pos: np.ndarray, neg: np.ndarray) -> float:
    wins = (pos[:, None] > neg[None, :]).sum()
    ties = (pos[:, None] == neg[None, :]).sum()
    return float((wins + 0.5 * ties) / (pos.size * neg.size))


def _metric_instance(rng: np.random.Generator):
    h, w = (int(v) for v in rng.integers(2, 17, size=2))
    y = rng.random((h, w))
    if rng.random() < 0.5:
        y = np.round(y * int(rng.integers(2, 8)))  # ties
    if np.ptp(y) == 0:
        y.flat[0] += 1.0
    p = (rng.random((h, w)) < 0.25).astype(np.float64)
    p.flat[int(rng.integers(p.size))] = 1.0
    if p.all():
        p.flat[0] = 0.0
    q = rng.random((h, w)) + 0.01
    pool = (rng.random((h, w)) < 0.3).astype(np.float64)
    pool.flat[int(rng.integers(pool.size))] = 1.0
    return y, p, q, pool


def check_metrics(result: SuiteResult, count: int, splits: int = 5) -> None:
    for k in range(count):
        y, p, q, pool = _metric_instance(_rng(result.seed, k))
        fixated = p > 0
        pos, neg = y[fixated], y[~fixated]
        result.close("auc_judd equals pair counting", scores.auc_judd(y, p), _pair_oracle(pos, neg), METRIC_TOLERANCE, k)

        z = (y - y.mean()) / y.std()
        result.close("nss equals mean standardized value at fixations", scores.nss_metric(y, p), float(z[fixated].mean()), METRIC_TOLERANCE, k)

        cc = float(np.corrcoef(y.ravel(), q.ravel())[0, 1])
        result.close("cc equals Pearson correlation", scores.cc_metric(y, q), cc, METRIC_TOLERANCE, k)

        a, b = y.ravel() / y.sum(), q.ravel() / q.sum()
        sim = sum(min(float(u), float(v)) for u, v in zip(a, b))
        result.close("sim equals histogram intersection", scores.sim_metric(y, q), sim, METRIC_TOLERANCE, k)

        draw_seed = k + 1
        negatives = y[pool > 0]
        draws = np.random.default_rng(draw_seed)
        n = min(negatives.size, pos.size)
        per_split = [
            _pair_oracle(pos, negatives[draws.choice(negatives.size, size=n, replace=False)])
            for _ in range(splits)
        ]
        result.close(
            "shuffled_auc equals mean per-split pair counting",
            scores.shuffled_auc(y, p, pool, splits=splits, rng_seed=draw_seed),
            float(np.mean(per_split)),
            METRIC_TOLERANCE,
            k,
        )


# ---------------------------------------------------------------------------
# convlstm-oracle
# ---------------------------------------------------------------------------

def _sigmoid(v: float) -> float:
    return 1.0 / (1.0 + math.exp(-v))


def _scalar_lstm_params(rng: np.random.Generator) -> tuple[dict[str, Tensor], dict[str, float]]:
    tensors: dict[str, Tensor] = {}
    scalars: dict[str, float] = {}
    for g in GATES:
        for kind, cin in (("x", 1), ("h", 1)):
            kernel = np.zeros((3, 3, cin, 1))
            value = float(rng.normal())
            kernel[1, 1, 0, 0] = value
            # Off-centre taps only ever see padding at 1x1.
            kernel[0, 0, 0, 0] = float(rng.normal())
            tensors[f"lstm.W_{kind}{g}"] = Tensor(kernel)
            scalars[f"w{kind}{g}"] = value
        bias = float(rng.normal())
        tensors[f"lstm.b_{g}"] = Tensor(np.array([bias]))
        scalars[f"b{g}"] = bias
        if g in PEEPHOLE_GATES:
            peep = float(rng.normal())
            tensors[f"lstm.W_c{g}"] = Tensor(np.full((1, 1, 1), peep))
            scalars[f"wc{g}"] = peep
    return tensors, scalars


def _scalar_step(s: dict[str, float], x: float, h: float, c: float) -> tuple[float, float, float, float, float]:
    i = _sigmoid(s["wxi"] * x + s["whi"] * h + s["wci"] * c + s["bi"])
    f = _sigmoid(s["wxf"] * x + s["whf"] * h + s["wcf"] * c + s["bf"])
    g = math.tanh(s["wxc"] * x + s["whc"] * h + s["bc"])
    c_new = f * c + i * g
    o = _sigmoid(s["wxo"] * x + s["who"] * h + s["wco"] * c_new + s["bo"])
    return o * math.tanh(c_new), c_new, i, f, o


def check_convlstm(result: SuiteResult, count: int, steps: int = 3) -> None:
    for k in range(count):
        rng = _rng(result.seed, k)
        tensors, scalars = _scalar_lstm_params(rng)
        state = network.ConvLSTMState.zeros(1, 1)
        h_ref = c_ref = 0.0
        for x in rng.normal(size=steps):
            gates: list[network.GateMaps] = []
            h, c = network.convlstm_step(Tensor(np.full((1, 1, 1), x)), state, tensors, gates=gates)
            state = network.ConvLSTMState(h, c)
            h_ref, c_ref, i, f, o = _scalar_step(scalars, float(x), h_ref, c_ref)
            result.close("hidden state equals scalar peephole LSTM", h.item(), h_ref, LSTM_TOLERANCE, k)
            result.close("cell state equals scalar peephole LSTM", c.item(), c_ref, LSTM_TOLERANCE, k)
            got = gates[0]
            in_range = all(0.0 < m.item() < 1.0 for m in (got.input, got.forget, got.output))
            result.check("gates lie in (0, 1)", in_range, k)
            result.check("|H| < 1", abs(h.item()) < 1.0, k, f"H={h.item()!r}")


# ---------------------------------------------------------------------------
# loss-closed-forms
# ---------------------------------------------------------------------------

def _kl_oracle(y: np.ndarray, q: np.ndarray, eps: float) -> float:
    qe = (q + eps) / (q + eps).sum()
    ye = (y + eps) / (y + eps).sum()
    return float(sum(a * math.log(a / b) for a, b in zip(qe.ravel(), ye.ravel())))


def check_losses(result: SuiteResult, count: int) -> None:
    eps = losses.DEFAULT_EPS
    y = Tensor(np.array([[1.0, 2.0], [3.0, 4.0]]))
    p = np.array([[0.0, 0.0], [0.0, 1.0]])
    result.close("nss_loss worked example", losses.nss_loss(y, p, eps).item(), -1.5 / math.sqrt(1.25), 1e-4, -1)

    for k in range(count):
        rng = _rng(result.seed, k)
        h, w = (int(v) for v in rng.integers(2, 13, size=2))
        q = rng.random((h, w)) + 1e-3
        q /= q.sum()
        y = rng.random((h, w))
        y[int(rng.integers(h)), int(rng.integers(w))] = 0.0
        p = np.zeros((h, w))
        p.flat[rng.choice(p.size, size=int(rng.integers(1, p.size)), replace=False)] = 1.0

        result.close("kl_div(Q, Q) = 0", losses.kl_div(Tensor(q), q, eps).item(), 0.0, LOSS_TOLERANCE, k)
        result.close("kl_div matches direct summation", losses.kl_div(Tensor(y), q, eps).item(), _kl_oracle(y, q, eps), METRIC_TOLERANCE, k)
        result.close("cc_loss(2Q+1, Q) = -1", losses.cc_loss(Tensor(2 * q + 1), q, eps).item(), -1.0, LOSS_TOLERANCE, k)
        result.close("cc_loss(5-3Q, Q) = +1", losses.cc_loss(Tensor(5 - 3 * q), q, eps).item(), 1.0, LOSS_TOLERANCE, k)

        scale, shift = float(rng.uniform(0.1, 10.0)), float(rng.normal())
        base = losses.nss_loss(Tensor(y), p, eps).item()
        result.close("nss_loss is affine invariant", losses.nss_loss(Tensor(scale * y + shift), p, eps).item(), base, LOSS_TOLERANCE, k)

        expected = (
            losses.kl_div(Tensor(y), q, eps).item()
            + 0.1 * losses.cc_loss(Tensor(y), q, eps).item()
            + 0.1 * base
        )
        result.close("combined loss weights CC and NSS by 0.1", losses.combined_loss(Tensor(y), p, q).item(), expected, LOSS_TOLERANCE, k)


# ---------------------------------------------------------------------------
# attention-contracts
# ---------------------------------------------------------------------------

def check_attention(result: SuiteResult, count: int) -> None:
    side, channels = TINY_MODEL.feature_size, TINY_MODEL.feature_channels
    result.check(
        "attention receptive field exceeds encoder's",
        network.receptive_field(network.attention_layers(TINY_MODEL))
        > network.receptive_field(network.encoder_layers(TINY_MODEL)),
        -1,
    )

    geometry = ModelConfig(input_size=224, encoder_widths=(2, 2, 2), attention_widths=(2, 2), hidden_channels=1)
    params = init_params(geometry, seed=result.seed, requires_grad=False)
    X = Tensor(_rng(result.seed, -1).normal(size=(28, 28, geometry.feature_channels)))
    coarse, M = network.attention_branch(X, params, geometry)
    result.check("28x28 features give a 7x7 coarse map", coarse.shape == (7, 7, 1), -1, f"got {coarse.shape}")
    result.check("M is upsampled back to 28x28", M.shape == (28, 28, 1), -1, f"got {M.shape}")

    for k in range(count):
        rng = _rng(result.seed, k)
        X = Tensor(rng.normal(scale=float(rng.uniform(0.1, 10.0)), size=(side, side, channels)))
        zero = ops.constant(0.0, (side, side, 1))
        result.check("residual enhance with M = 0 is the identity", np.array_equal(network.enhance(X, zero).data, X.data), k)

        params = init_params(TINY_MODEL, seed=int(rng.integers(2**31)), requires_grad=False)
        M = network.attention_forward(X, params, TINY_MODEL)
        result.check("M lies in [0, 1]", bool(M.data.min() >= 0.0 and M.data.max() <= 1.0), k,
                     f"range [{M.data.min()!r}, {M.data.max()!r}]")

        for name in params.group("attention."):
            params[name].data[...] = 0.0
        M = network.attention_forward(X, params, TINY_MODEL)
        result.check("zero attention weights give M = 0.5", bool(np.allclose(M.data, 0.5, rtol=0.0, atol=1e-12)), k)


# ---------------------------------------------------------------------------
# training-contracts
# ---------------------------------------------------------------------------

def _image_batch(rng: np.random.Generator, size: int = 2) -> ImageBatch:
    side = TRAIN_MODEL.feature_size
    fixation_maps, distributions = [], []
    for _ in range(size):
        fixations = np.zeros((side, side))
        fixations.flat[rng.choice(side * side, size=2, replace=False)] = 1.0
        q = rng.random((side, side)) + 0.01
        fixation_maps.append(fixations)
        distributions.append(q / q.sum())
    images = rng.uniform(size=(size, TRAIN_MODEL.input_size, TRAIN_MODEL.input_size, 3))
    return ImageBatch([("img", i) for i in range(size)], images, fixation_maps, distributions)


def _image_step_arrays(seed: int, batch: ImageBatch) -> tuple[dict[str, np.ndarray], dict[str, np.ndarray], optim.OptimState]:
    params: ModelParams = init_params(TRAIN_MODEL, seed=seed)
    before = params.arrays()
    state = optim.OptimState.for_params(params)
    trainer.image_step(params, TRAIN_MODEL, batch, state, 1e-3, losses.LossWeights())
    return before, params.arrays(), state


def check_training(result: SuiteResult, count: int) -> None:
    for epoch in range(10):
        result.close(
            f"lr at epoch {epoch} is 1e-4 / 10^floor(epoch/2)",
            optim.lr_at(epoch), 1e-4 / 10.0 ** (epoch // 2), 1e-18, -1,
        )

    for k in range(count):
        rng = _rng(result.seed, k)
        g = rng.normal(size=(3,))
        p = Tensor(rng.normal(size=(3,)), requires_grad=True)
        start = p.data.copy()
        optim.adam_step({"p": p}, {"p": g}, optim.OptimState.for_params({"p": p}), 1e-3)
        expected = start - 1e-3 * g / (np.abs(g) + 1e-8)
        result.close("first Adam step moves by lr * g / (|g| + eps)", float(np.max(np.abs(p.data - expected))), 0.0, 1e-12, k)

        batch = _image_batch(rng)
        seed = int(rng.integers(2**31))
        before, after, state = _image_step_arrays(seed, batch)
        masked = [n for n in before if n.startswith(("lstm.", "readout."))]
        unchanged = all(np.array_equal(before[n], after[n]) for n in masked)
        result.check("image step leaves convLSTM and readout unchanged", unchanged, k)
        result.check("image step keeps masked Adam counts at 0", all(state.counts[n] == 0 for n in masked), k)

        _, again, _ = _image_step_arrays(seed, batch)
        result.check("identical seeds give identical parameters", all(np.array_equal(after[n], again[n]) for n in after), k)


SUITES: tuple[tuple[str, Callable[[SuiteResult, int], None]], ...] = (
    ("tensor-gradients", check_gradients),
    ("metric-oracles", check_metrics),
    ("convlstm-oracle", check_convlstm),
    ("loss-closed-forms", check_losses),
    ("attention-contracts", check_attention),
    ("training-contracts", check_training),
)


def run_selfcheck(seed: int = 0, instances: Optional[int] = None) -> SelfCheckReport:
    """Run every suite; ``instances`` caps the per-suite instance count."""
    results = []
    for name, suite in SUITES:
        count = SUITE_INSTANCES[name] if instances is None else min(instances, SUITE_INSTANCES[name])
        result = SuiteResult(name, instances=count, seed=seed)
        logger.info("selfcheck: %s (%d instances)", name, count)
        try:
            suite(result, count)
        except Exception as exc:  # reported as a failed property
            result.failures.append(PropertyFailure(name, f"suite raised {type(exc).__name__}", seed, -1, str(exc)))
        results.append(result)
    return SelfCheckReport(seed=seed, suites=results)
