"""Tangent-space observer: gain, coupled stepping, detectability diagnostics.

The observer

    dx~/dt = A(t) x~ + F(t) u + L(t) (y - C(t) x~)

corrects only inside the non-stable subspace tracked by the reduced
orthonormal frame Q(t): the gain is L = p Q Qt^T C^T where Qt, Rt is the
QR factorization of C^T C Q.  The running average of diag(Rt) along the
flow decides, direction by direction, whether the output actually sees
the frame column (directional detectability), and the predicted error
exponent of direction j is lambda_j - p * rbar_j.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import StepPreconditionError
from .integrators import StepConfig, joint_rk4_step, projected_rk4_step
from .linalg import mgs_qr
from .lyapunov import default_frame, skew_rule
from .system import LtvSystem

__all__ = [
    "ObserverConfig",
    "ObserverState",
    "compute_gain",
    "observer_step",
    "DirectionDetectability",
    "DetectabilityReport",
    "detectability_report",
    "min_gain_suggestion",
    "gain_snapshots",
]


@dataclass(frozen=True)
class ObserverConfig:
    """Gain scalar ``p``, frame width ``k``, and the integration grid.

    ``detect_tol`` (1/s) is the smallest average Rt diagonal that counts
    as detectable; ``zero_band`` is the exponent band treated as
    non-negative.  Both are shared with the spectrum diagnostics so the
    design steps agree on which directions are non-stable.
    """

    p: float
    k: int
    step: StepConfig
    q0: np.ndarray | None = None
    detect_tol: float = 1e-3
    zero_band: float = 1e-3

    def __post_init__(self):
        if not (self.p > 0.0 and np.isfinite(self.p)):
            raise ValueError(f"gain p must be positive, got {self.p}")
        if self.k < 1:
            raise ValueError(f"frame width k must be >= 1, got {self.k}")

    def initial_frame(self, n):
        if self.k > n:
            raise ValueError(f"k={self.k} exceeds state dimension {n}")
        if self.q0 is None:
            return default_frame(n, self.k)
        q0 = np.asarray(self.q0, dtype=float)
        if q0.shape != (n, self.k):
            raise ValueError(f"q0 must have shape ({n}, {self.k}), got {q0.shape}")
        q, r = mgs_qr(q0)
        if np.any(np.diag(r) <= 0.0):
            raise ValueError("q0 columns are linearly dependent")
        return q


@dataclass
class ObserverState:
    """Estimate, reduced frame, and current time of one observer run."""

    x: np.ndarray
    q: np.ndarray
    t: float


def _gain_basis(c_val, q):
    """Qt with degenerate columns zeroed, plus diag(Rt) >= 0.

    Columns of C^T C Q that are numerically dependent get Rt_jj = 0 from
    the QR routine; their completion columns must not leak into the gain,
    so they are zeroed here and the matching frame direction is left
    uncorrected.
    """
    qt, rt = mgs_qr(c_val.T @ (c_val @ q))
    rdiag = np.diag(rt).copy()
    if np.any(rdiag == 0.0):
        qt = qt * (rdiag > 0.0)
    return qt, rdiag


def compute_gain(a_val, c_val, q, p):
    """Observer gain L = p Q Qt^T C^T and the Rt diagonal.

    ``a_val`` is accepted so callers can hand over the full stage
    evaluation, but the gain depends only on C and the frame.
    """
    qt, rdiag = _gain_basis(np.asarray(c_val, dtype=float), q)
    l = p * q @ (qt.T @ c_val.T)
    return l, rdiag


def _as_signal(v, width):
    """Normalize a signal argument to a callable t -> (width,) vector."""
    if v is None:
        zero = np.zeros(width)
        return lambda t: zero
    if callable(v):
        return lambda t: np.atleast_1d(np.asarray(v(t), dtype=float))
    value = np.atleast_1d(np.asarray(v, dtype=float))
    return lambda t: value


def observer_step(sys: LtvSystem, st: ObserverState, u, y, conf: ObserverConfig):
    """Advance estimate and frame by one step of size ``conf.step.h``.

    ``u`` and ``y`` may be constants (held over the step) or callables of
    time; the gain is recomputed inside every RK4 stage from that stage's
    frame, and the frame is re-orthonormalized after the step.
    """
    a_fn, c_fn, f_fn = sys.a.bind(), sys.c.bind(), sys.f.bind()
    u_fn = _as_signal(u, sys.q)
    y_fn = _as_signal(y, sys.r)
    p = conf.p
    h = conf.step.h

    def rhs(t, states):
        x, q = states
        a_val = a_fn(t)
        c_val = c_fn(t)
        qt, _ = _gain_basis(c_val, q)
        corr = p * (q @ (qt.T @ (c_val.T @ (y_fn(t) - c_val @ x))))
        dx = a_val @ x + f_fn(t) @ u_fn(t) + corr
        m = a_val @ q
        w = q.T @ m
        dq = m - q @ (w - skew_rule(w))
        return [dx, dq]

    x_new, q_new = joint_rk4_step(rhs, st.t, [st.x, st.q], h, project=(1,))
    return ObserverState(x=x_new, q=q_new, t=st.t + h)


@dataclass
class DirectionDetectability:
    """Verdict for one frame direction."""

    index: int
    lambda_hat: float
    r_bar: float
    detectable: bool
    mu_hat: float
    nonstable: bool


@dataclass
class DetectabilityReport:
    """Directional detectability along the frame flow.

    ``ok`` is False when some non-stable direction is invisible to the
    output (its average Rt diagonal stays under ``detect_tol``); no gain
    scalar can then push that error exponent negative.
    ``min_ctcq_sigma`` is the smallest singular value of C^T C Q seen on
    the horizon; a near-zero dip flags possible gain non-smoothness.
    """

    directions: list
    ok: bool
    p: float
    detect_tol: float
    zero_band: float
    min_ctcq_sigma: float
    q_final: np.ndarray = field(repr=False)
    history_t: np.ndarray = field(repr=False)
    history_lambda: np.ndarray = field(repr=False)
    history_rbar: np.ndarray = field(repr=False)
    config: StepConfig = field(repr=False)

    @property
    def failed_directions(self):
        return [d for d in self.directions if d.nonstable and not d.detectable]


def detectability_report(sys: LtvSystem, conf: ObserverConfig, sample_stride=None):
    """Run the frame flow and average diag(Rt) and diag(B) per direction.

    Exponent averages come from the same pass, so the non-stable
    classification and the detectability verdict refer to one frame
    trajectory.
    """
    a_fn, c_fn = sys.a.bind(), sys.c.bind()
    cfg = conf.step
    n = sys.n
    k = conf.k
    q = conf.initial_frame(n)
    h = cfg.h
    n_steps = cfg.n_steps
    stride = sample_stride or max(1, n_steps // 4000)

    def diagnostics(t, q):
        a_val = a_fn(t)
        c_val = c_fn(t)
        b_diag = np.einsum("ij,ij->j", q, a_val @ q)
        ctcq = c_val.T @ (c_val @ q)
        _, rt = mgs_qr(ctcq)
        rdiag = np.diag(rt).copy()
        sigma_min = np.linalg.svd(ctcq, compute_uv=False)[-1]
        return a_val, b_diag, rdiag, sigma_min

    a_cur, b_cur, rd_cur, sig = diagnostics(cfg.t0, q)
    min_sigma = sig
    b_int = np.zeros(k)
    rd_int = np.zeros(k)
    hist_t, hist_lam, hist_rbar = [], [], []

    for i in range(n_steps):
        t = cfg.time(i)
        a_mid = a_fn(t + 0.5 * h)
        a_next = a_fn(cfg.time(i + 1))
        q = projected_rk4_step(None, t, q, h, skew_rule, a_stages=(a_cur, a_mid, a_next))
        _, b_next, rd_next, sig = diagnostics(cfg.time(i + 1), q)
        a_cur = a_next
        b_int += (0.5 * h) * (b_cur + b_next)
        rd_int += (0.5 * h) * (rd_cur + rd_next)
        b_cur, rd_cur = b_next, rd_next
        if sig < min_sigma:
            min_sigma = sig
        if (i + 1) % stride == 0 or i == n_steps - 1:
            elapsed = cfg.time(i + 1) - cfg.t0
            hist_t.append(cfg.time(i + 1))
            hist_lam.append(b_int / elapsed)
            hist_rbar.append(rd_int / elapsed)

    lam = b_int / cfg.horizon
    rbar = rd_int / cfg.horizon
    directions = []
    ok = True
    for j in range(k):
        nonstable = lam[j] >= -conf.zero_band
        detectable = rbar[j] > conf.detect_tol
        if nonstable and not detectable:
            ok = False
        directions.append(
            DirectionDetectability(
                index=j,
                lambda_hat=float(lam[j]),
                r_bar=float(rbar[j]),
                detectable=bool(detectable),
                mu_hat=float(lam[j] - conf.p * rbar[j]),
                nonstable=bool(nonstable),
            )
        )
    return DetectabilityReport(
        directions=directions,
        ok=ok,
        p=conf.p,
        detect_tol=conf.detect_tol,
        zero_band=conf.zero_band,
        min_ctcq_sigma=float(min_sigma),
        q_final=q,
        history_t=np.asarray(hist_t),
        history_lambda=np.asarray(hist_lam),
        history_rbar=np.asarray(hist_rbar),
        config=cfg,
    )


def min_gain_suggestion(report: DetectabilityReport, margin=1.0):
    """Smallest gain scalar pushing every non-stable error exponent to -margin.

    The predicted exponent of direction j is lambda_j - p * rbar_j, so
    requiring it <= -margin needs p >= (lambda_j + margin) / rbar_j; the
    suggestion is the maximum over the non-stable directions.  Raises
    when a non-stable direction is not detectable (no finite p works).
    """
    if margin < 0.0:
        raise ValueError("margin must be >= 0")
    worst = 0.0
    for d in report.directions:
        if not d.nonstable:
            continue
        if not d.detectable:
            raise StepPreconditionError(
                "ii",
                f"direction {d.index} is non-stable (lambda={d.lambda_hat:.4g}) "
                f"but not detectable (rbar={d.r_bar:.4g})",
            )
        worst = max(worst, (d.lambda_hat + margin) / d.r_bar)
    return worst


def gain_snapshots(sys: LtvSystem, conf: ObserverConfig, times):
    """Gain matrices L(t) sampled along the frame flow.

    ``times`` must lie on the step grid (within rounding); returned list
    pairs each requested time with the gain computed from the live frame.
    """
    cfg = conf.step
    a_fn, c_fn = sys.a.bind(), sys.c.bind()
    h = cfg.h
    wanted = {}
    for t in np.atleast_1d(np.asarray(times, dtype=float)):
        i = int(round((t - cfg.t0) / h))
        if not 0 <= i <= cfg.n_steps or abs(cfg.time(i) - t) > 1e-9:
            raise ValueError(f"snapshot time {t} is off the step grid")
        wanted.setdefault(i, t)

    q = conf.initial_frame(sys.n)
    out = []

    def snap(i):
        if i in wanted:
            t = cfg.time(i)
            l, _ = compute_gain(a_fn(t), c_fn(t), q, conf.p)
            out.append((t, l, q.copy()))

    a_cur = a_fn(cfg.t0)
    snap(0)
    last = max(wanted) if wanted else 0
    for i in range(last):
        t = cfg.time(i)
        a_mid = a_fn(t + 0.5 * h)
        a_next = a_fn(cfg.time(i + 1))
        q = projected_rk4_step(None, t, q, h, skew_rule, a_stages=(a_cur, a_mid, a_next))
        a_cur = a_next
        snap(i + 1)
    out.sort(key=lambda item: item[0])
    return out
