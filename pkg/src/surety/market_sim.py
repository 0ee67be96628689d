"""Monte Carlo market of one-shot delegated purchases.

Each episode is one consumer deciding whether to route a purchase of size
M through the covered settlement protocol. The consumer sees a noisy
failure estimate, the underwriter prices the true risk through an
optional classification channel, the merchant decides whether the
collateral demand is worth posting, and a shared failure coin resolves
both the protected and the unprotected (counterfactual) run of the same
episode. Non-adopting consumers transact directly and never touch the
protocol.

Two execution modes produce identical results by construction:

* ``equations``: vectorized closed-form economics over the whole cell,
  with the first ``cross_check`` episodes replayed through the real
  settlement machine and compared exactly (every run, not just tests).
* ``engine``: every episode is played through the machine against a
  fresh ledger; the closed-form values are still computed and any
  disagreement raises ``EngineInconsistency``.

All money becomes integer minor units (cents, round half up) the moment
it is quoted, so both modes do exact integer arithmetic on identical
amounts and "identical" means equality, not tolerance.

Common random numbers: one draw set per sweep, shared by every cell, so
that moving along a sweep axis changes decisions only through prices.
"""

from __future__ import annotations

import hashlib
import io
import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence, Union

import numpy as np

from .engine import EpisodePlan, check_episode, plan_economics
from .errors import DegenerateBaseline, EngineInconsistency
from .underwriting import CollateralSchedule, RiskChannel, estimate_risk

# population and policy defaults; see the pricing module for schedule defaults
DEFAULT_EPISODES = 5000
DEFAULT_SEED = 201
DEFAULT_ALPHA = 0.35
DEFAULT_SIGMA_USER = 0.125
HISTORY_SAMPLES = 100

LAMBDA_GRID: tuple[float, ...] = tuple(round(0.1 * i, 1) for i in range(11))
FPFN_GRID: tuple[float, ...] = (0.0, 0.2, 0.4, 0.6, 0.8, 1.0)
MIDPOINT_GRID: tuple[float, ...] = (0.10, 0.15, 0.20, 0.25, 0.35)
STEEPNESS_GRID: tuple[float, ...] = (5.0, 10.0, 20.0, 50.0)
# the schedule-shape sweep keeps a modest loading so wallet comparisons
# are made on a book that is not exactly actuarially break-even
SIGMOID_LAM = 0.2

SWEEP_KINDS = ("lambda", "fpfn", "sigmoid")


# -- draws ---------------------------------------------------------------


@dataclass(frozen=True)
class EpisodeDraws:
    """Pre-drawn randomness for a population of episodes (CRN block).

    M: purchase size in dollars, LogNormal(4.0, 1.2) on the underlying
    normal, so median ~= $54.6. p: true failure probability,
    Beta(1.5, 8.5). hist: the consumer's observed failure frequency over
    HISTORY_SAMPLES comparable purchases. eps: consumer estimation noise.
    mroll/oroll/froll: uniform coins for merchant posting, human
    override, and execution failure.
    """

    M: np.ndarray
    p: np.ndarray
    hist: np.ndarray
    eps: np.ndarray
    mroll: np.ndarray
    oroll: np.ndarray
    froll: np.ndarray

    @property
    def n(self) -> int:
        return self.M.shape[0]

    def episode(self, i: int) -> "EpisodeDraw":
        return EpisodeDraw(
            M=float(self.M[i]),
            p=float(self.p[i]),
            hist=float(self.hist[i]),
            eps=float(self.eps[i]),
            mroll=float(self.mroll[i]),
            oroll=float(self.oroll[i]),
            froll=float(self.froll[i]),
        )


@dataclass(frozen=True)
class EpisodeDraw:
    """Scalar randomness for a single episode."""

    M: float
    p: float
    hist: float
    eps: float
    mroll: float
    oroll: float
    froll: float


def draw_episodes(seed: int, n: int = DEFAULT_EPISODES, sigma_user: float = DEFAULT_SIGMA_USER) -> EpisodeDraws:
    """Draw one CRN block. The draw order is part of the reproducibility
    contract; do not reorder."""
    rng = np.random.default_rng(seed)
    m = rng.lognormal(4.0, 1.2, n)
    p = rng.beta(1.5, 8.5, n)
    hist = rng.binomial(HISTORY_SAMPLES, p, n) / HISTORY_SAMPLES
    eps = rng.normal(0.0, sigma_user, n)
    mroll = rng.random(n)
    oroll = rng.random(n)
    froll = rng.random(n)
    return EpisodeDraws(M=m, p=p, hist=hist, eps=eps, mroll=mroll, oroll=oroll, froll=froll)


# -- behavioral policies ----------------------------------------------------


@dataclass(frozen=True)
class UserPolicy:
    """Consumer adoption rule: route through the protocol when the
    perceived value of protection alpha * M * p_user strictly exceeds the
    quoted premium."""

    alpha: float = DEFAULT_ALPHA

    def __post_init__(self) -> None:
        if not float(self.alpha) > 0.0:
            raise ValueError("alpha must be positive")


def user_estimate(hist, eps):
    """The consumer's failure estimate: observed frequency plus noise,
    clipped into [0, 1]."""
    return np.clip(np.asarray(hist, dtype=float) + np.asarray(eps, dtype=float), 0.0, 1.0)


def user_adopts(policy: UserPolicy, m_minor, p_user, premium_minor):
    return policy.alpha * np.asarray(m_minor) * np.asarray(p_user) > np.asarray(premium_minor)


def merchant_posts(d_minor, m_minor, mroll):
    """Merchant posting rule: willingness falls linearly in the demanded
    collateral fraction, from 0.9 at zero demand to 0.1 at full demand."""
    frac = np.asarray(d_minor) / np.asarray(m_minor)
    return np.asarray(mroll) < (0.9 - 0.8 * frac)


# -- per-cell preparation -----------------------------------------------------


@dataclass(frozen=True)
class CellParams:
    lam: float = 0.0
    fp: float = 0.0
    fn: float = 0.0
    midpoint: float = 0.15
    steepness: float = 10.0


@dataclass(frozen=True)
class CellPlan:
    """All episode decisions of one cell, resolved and quantized."""

    m_minor: np.ndarray
    d_minor: np.ndarray
    pi_minor: np.ndarray
    adopt: np.ndarray
    post: np.ndarray
    override_proceed: np.ndarray
    fail: np.ndarray

    def episode(self, i: int) -> EpisodePlan:
        return EpisodePlan(
            m_minor=int(self.m_minor[i]),
            d_minor=int(self.d_minor[i]),
            pi_minor=int(self.pi_minor[i]),
            adopt=bool(self.adopt[i]),
            post=bool(self.post[i]),
            override_proceed=bool(self.override_proceed[i]),
            fail=bool(self.fail[i]),
        )


def _round_half_up(x) -> np.ndarray:
    return np.floor(np.asarray(x, dtype=float) + 0.5).astype(np.int64)


def prepare_cell(draws: EpisodeDraws, params: CellParams, policy: UserPolicy) -> CellPlan:
    """Quote every episode and resolve every decision, vectorized.

    Quantization happens here, once: both execution modes consume these
    integer amounts and boolean decisions, so they cannot drift apart on
    floating-point details.
    """
    m_minor = np.maximum(_round_half_up(draws.M * 100.0), 1)
    channel = RiskChannel(false_positive=params.fp, false_negative=params.fn)
    schedule = CollateralSchedule(midpoint=params.midpoint, steepness=params.steepness)
    p_hat = estimate_risk(draws.p, channel)
    sigma = schedule.fraction(p_hat)
    d_minor = np.minimum(_round_half_up(sigma * m_minor), m_minor)
    pi_minor = _round_half_up(p_hat * (1.0 - sigma) * m_minor * (1.0 + params.lam))

    p_user = user_estimate(draws.hist, draws.eps)
    adopt = user_adopts(policy, m_minor, p_user, pi_minor)
    post = merchant_posts(d_minor, m_minor, draws.mroll)
    override_proceed = draws.oroll < 0.5
    fail = draws.froll < draws.p
    return CellPlan(
        m_minor=m_minor,
        d_minor=d_minor,
        pi_minor=pi_minor,
        adopt=adopt,
        post=post,
        override_proceed=override_proceed,
        fail=fail,
    )


# -- single episode (exposed for tests and the CLI) ---------------------------


@dataclass(frozen=True)
class EpisodeOutcome:
    adopted: bool
    executed: bool
    cancelled: bool
    failed: bool
    cf_failed: bool
    user_loss_minor: int
    cf_loss_minor: int
    underwriter_delta_minor: int
    m_minor: int
    d_minor: int
    pi_minor: int

    def __post_init__(self) -> None:
        if self.cancelled and (self.executed or self.failed or self.user_loss_minor):
            raise EngineInconsistency("a cancelled episode cannot execute, fail, or lose")
        if not 0 <= self.user_loss_minor <= self.m_minor:
            raise EngineInconsistency("user loss out of range")
        if not self.adopted and self.underwriter_delta_minor != 0:
            raise EngineInconsistency("non-adopting episodes cannot move the treasury")


def run_episode(
    draw: EpisodeDraw,
    params: CellParams = CellParams(),
    policy: UserPolicy = UserPolicy(),
    mode: str = "equations",
) -> EpisodeOutcome:
    """Resolve one episode. ``mode='engine'`` plays it through the full
    settlement machine and verifies the closed-form economics exactly."""
    draws = EpisodeDraws(
        M=np.array([draw.M]),
        p=np.array([draw.p]),
        hist=np.array([draw.hist]),
        eps=np.array([draw.eps]),
        mroll=np.array([draw.mroll]),
        oroll=np.array([draw.oroll]),
        froll=np.array([draw.froll]),
    )
    plan = prepare_cell(draws, params, policy).episode(0)
    if mode == "engine":
        econ = check_episode(plan)
    elif mode == "equations":
        econ = plan_economics(plan)
    else:
        raise ValueError(f"unknown mode {mode!r}")
    cf_failed = plan.fail
    return EpisodeOutcome(
        adopted=plan.adopt,
        executed=econ.executed,
        cancelled=econ.cancelled,
        failed=econ.failed,
        cf_failed=cf_failed,
        user_loss_minor=econ.user_loss,
        cf_loss_minor=plan.m_minor if cf_failed else 0,
        underwriter_delta_minor=econ.underwriter_delta,
        m_minor=plan.m_minor,
        d_minor=plan.d_minor,
        pi_minor=plan.pi_minor,
    )


# -- cell execution ------------------------------------------------------------


@dataclass(frozen=True)
class CellMetrics:
    params: CellParams
    episodes: int
    adoption_rate: float
    loss_reduction_rate: float
    failure_reduction_rate: float
    wallet_final_minor: int
    premium_total_minor: int


def _vector_economics(plan: CellPlan) -> dict:
    covered = plan.adopt & ((plan.d_minor == 0) | plan.post)
    cancelled = plan.adopt & ~covered & ~plan.override_proceed
    executed = ~cancelled
    failed = executed & plan.fail
    slash = np.where(covered & plan.fail, np.minimum(plan.d_minor, plan.m_minor), 0)
    payout = np.where(covered & plan.fail, plan.m_minor - slash, 0)
    user_loss = np.where(failed, plan.m_minor - slash - payout, 0)
    cf_loss = np.where(plan.fail, plan.m_minor, 0)
    wallet = np.where(covered, np.where(plan.fail, plan.pi_minor - payout, plan.pi_minor), 0)
    return {
        "covered": covered,
        "cancelled": cancelled,
        "executed": executed,
        "failed": failed,
        "user_loss": user_loss,
        "cf_loss": cf_loss,
        "wallet": wallet,
    }


def _metrics_from_arrays(plan: CellPlan, econ: dict, params: CellParams) -> CellMetrics:
    n = plan.m_minor.shape[0]
    cf_loss_total = int(econ["cf_loss"].sum())
    cf_fail_count = int(plan.fail.sum())
    if cf_loss_total == 0 or cf_fail_count == 0:
        raise DegenerateBaseline(
            "no counterfactual losses in this cell; reduction rates are undefined"
        )
    user_loss_total = int(econ["user_loss"].sum())
    failed_count = int(econ["failed"].sum())
    return CellMetrics(
        params=params,
        episodes=n,
        adoption_rate=float(plan.adopt.mean()),
        loss_reduction_rate=1.0 - user_loss_total / cf_loss_total,
        failure_reduction_rate=1.0 - failed_count / cf_fail_count,
        wallet_final_minor=int(econ["wallet"].sum()),
        premium_total_minor=int(plan.pi_minor[econ["covered"]].sum()),
    )


def run_cell(
    draws: EpisodeDraws,
    params: CellParams,
    policy: UserPolicy = UserPolicy(),
    mode: str = "equations",
    cross_check: Union[int, str] = 32,
) -> CellMetrics:
    """Run one parameter cell over the draw block.

    In equations mode the first ``cross_check`` episodes (or all of them
    with ``cross_check='all'``) are replayed through the settlement
    machine; in engine mode every episode runs through it. Either way a
    mismatch with the closed-form economics raises EngineInconsistency.
    """
    plan = prepare_cell(draws, params, policy)
    econ = _vector_economics(plan)
    n = draws.n

    if mode == "engine" or cross_check == "all":
        indices = range(n)
    elif mode == "equations":
        indices = range(min(int(cross_check), n))
    else:
        raise ValueError(f"unknown mode {mode!r}")

    for i in indices:
        episode = plan.episode(i)
        verified = check_episode(episode, job_id=f"sim-{i}")
        if (
            verified.user_loss != int(econ["user_loss"][i])
            or verified.underwriter_delta != int(econ["wallet"][i])
            or verified.failed != bool(econ["failed"][i])
            or verified.cancelled != bool(econ["cancelled"][i])
        ):
            raise EngineInconsistency(
                f"episode {i}: vectorized economics diverge from the machine"
            )
    return _metrics_from_arrays(plan, econ, params)


# -- sweeps ---------------------------------------------------------------------


@dataclass(frozen=True)
class SweepConfig:
    """Effective sweep configuration; every field has a default, a JSON
    config file may override any subset, and the CLI may override seed,
    episode count, and kind on top of that."""

    kind: str = "lambda"
    episodes: int = DEFAULT_EPISODES
    seed: int = DEFAULT_SEED
    alpha: float = DEFAULT_ALPHA
    sigma_user: float = DEFAULT_SIGMA_USER
    midpoint: float = 0.15
    steepness: float = 10.0
    lam: float = 0.0
    fp: float = 0.0
    fn: float = 0.0
    lambda_grid: tuple[float, ...] = LAMBDA_GRID
    fp_grid: tuple[float, ...] = FPFN_GRID
    fn_grid: tuple[float, ...] = FPFN_GRID
    midpoint_grid: tuple[float, ...] = MIDPOINT_GRID
    steepness_grid: tuple[float, ...] = STEEPNESS_GRID
    sigmoid_lam: float = SIGMOID_LAM

    def __post_init__(self) -> None:
        if self.kind not in SWEEP_KINDS:
            raise ValueError(f"kind must be one of {SWEEP_KINDS}, got {self.kind!r}")
        if isinstance(self.episodes, bool) or not isinstance(self.episodes, int) or self.episodes < 1:
            raise ValueError("episodes must be a positive integer")
        if isinstance(self.seed, bool) or not isinstance(self.seed, int) or self.seed < 0:
            raise ValueError("seed must be a non-negative integer")

    @classmethod
    def from_dict(cls, data: dict) -> "SweepConfig":
        if not isinstance(data, dict):
            raise ValueError("config must be a JSON object")
        known = {f for f in cls.__dataclass_fields__}  # noqa: C416 - explicit set build
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown config fields: {sorted(unknown)}")
        clean = dict(data)
        for grid in ("lambda_grid", "fp_grid", "fn_grid", "midpoint_grid", "steepness_grid"):
            if grid in clean:
                value = clean[grid]
                if not isinstance(value, (list, tuple)) or not value:
                    raise ValueError(f"{grid} must be a non-empty array")
                clean[grid] = tuple(float(v) for v in value)
        return cls(**clean)

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "episodes": self.episodes,
            "seed": self.seed,
            "alpha": self.alpha,
            "sigma_user": self.sigma_user,
            "midpoint": self.midpoint,
            "steepness": self.steepness,
            "lam": self.lam,
            "fp": self.fp,
            "fn": self.fn,
            "lambda_grid": list(self.lambda_grid),
            "fp_grid": list(self.fp_grid),
            "fn_grid": list(self.fn_grid),
            "midpoint_grid": list(self.midpoint_grid),
            "steepness_grid": list(self.steepness_grid),
            "sigmoid_lam": self.sigmoid_lam,
        }

    def digest(self) -> str:
        canonical = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()

    def cells(self) -> list[CellParams]:
        base = CellParams(
            lam=self.lam,
            fp=self.fp,
            fn=self.fn,
            midpoint=self.midpoint,
            steepness=self.steepness,
        )
        if self.kind == "lambda":
            return [replace(base, lam=lam) for lam in self.lambda_grid]
        if self.kind == "fpfn":
            return [
                replace(base, fp=fp, fn=fn)
                for fp in self.fp_grid
                for fn in self.fn_grid
            ]
        return [
            replace(base, lam=self.sigmoid_lam, midpoint=m, steepness=s)
            for m in self.midpoint_grid
            for s in self.steepness_grid
        ]


@dataclass(frozen=True)
class SweepResult:
    config: SweepConfig
    cells: tuple[CellMetrics, ...]

    def cell(self, **filters) -> CellMetrics:
        """Single-cell lookup by parameter value, e.g. cell(lam=0.3)."""
        matches = [
            c
            for c in self.cells
            if all(
                abs(getattr(c.params, key) - value) < 1e-12 for key, value in filters.items()
            )
        ]
        if len(matches) != 1:
            raise KeyError(f"{len(matches)} cells match {filters}")
        return matches[0]


def _cell_task(args: tuple) -> CellMetrics:
    seed, episodes, sigma_user, alpha, params, mode, cross_check = args
    draws = draw_episodes(seed, episodes, sigma_user)
    return run_cell(draws, params, UserPolicy(alpha), mode=mode, cross_check=cross_check)


def run_sweep(
    config: SweepConfig,
    mode: str = "equations",
    cross_check: Union[int, str] = 32,
    jobs: int = 1,
) -> SweepResult:
    """Run every cell of the configured sweep over one shared draw block."""
    cells = config.cells()
    if jobs > 1:
        # workers re-draw the CRN block from the seed instead of shipping
        # the arrays; results are ordered, so parallelism cannot reorder rows
        tasks = [
            (config.seed, config.episodes, config.sigma_user, config.alpha, params, mode, cross_check)
            for params in cells
        ]
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_cell_task, tasks))
        return SweepResult(config=config, cells=tuple(results))
    draws = draw_episodes(config.seed, config.episodes, config.sigma_user)
    policy = UserPolicy(config.alpha)
    results = [
        run_cell(draws, params, policy, mode=mode, cross_check=cross_check) for params in cells
    ]
    return SweepResult(config=config, cells=tuple(results))


# -- report writing ----------------------------------------------------------

CSV_COLUMNS = (
    "sweep",
    "lam",
    "fp",
    "fn",
    "m",
    "s",
    "adoption_rate",
    "loss_reduction_rate",
    "failure_reduction_rate",
    "wallet_final",
    "episodes",
    "seed",
)


def _fmt_param(value: float) -> str:
    f = float(value)
    return str(int(f)) if f == int(f) else repr(f)


def render_csv(result: SweepResult) -> str:
    """Render a sweep as CSV with a commented metadata header.

    The output is byte-reproducible: same config, same bytes.
    """
    config = result.config
    out = io.StringIO()
    out.write("# settlement market sweep\n")
    out.write(f"# kind: {config.kind}\n")
    out.write(f"# seed: {config.seed}\n")
    out.write(f"# episodes: {config.episodes}\n")
    out.write(f"# config_digest: sha256:{config.digest()}\n")
    out.write(",".join(CSV_COLUMNS) + "\n")
    for cell in result.cells:
        p = cell.params
        row = (
            config.kind,
            _fmt_param(p.lam),
            _fmt_param(p.fp),
            _fmt_param(p.fn),
            _fmt_param(p.midpoint),
            _fmt_param(p.steepness),
            f"{cell.adoption_rate:.6f}",
            f"{cell.loss_reduction_rate:.6f}",
            f"{cell.failure_reduction_rate:.6f}",
            f"{cell.wallet_final_minor / 100.0:.2f}",
            str(cell.episodes),
            str(config.seed),
        )
        out.write(",".join(row) + "\n")
    return out.getvalue()


def write_csv(result: SweepResult, path: str) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(render_csv(result))
