"""Metropolis-within-Gibbs chain for the temporal model, plus collapsed-Gibbs LDA.

One sweep updates, in order: every token assignment (collapsed Gibbs), then
per period the concentration alpha_t and the realized baseline weights
pi_tilde_t (Metropolis with symmetric proposals), then the covariate loading
matrix eta (zero-sum pairwise transfers), then the walk rate lambda (exact
conjugate Gibbs draw). LDA mode runs the token updates only, against fixed
uniform prior weights.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np
from scipy.special import gammaln

from .corpus import Corpus, FlatCorpus
from .errors import InputError, InvariantError
from .model import ChainState, ModelConfig, log_joint, recompute_counts

STREAM_INIT = 0
STREAM_SWEEP = 1
STREAM_EVAL = 2

TUNE_INTERVAL = 50
TUNE_TARGET_LOW = 0.25
TUNE_TARGET_HIGH = 0.45


def substream(seed: int, *key: int) -> np.random.Generator:
    """Independent generator derived from a root seed and integer path."""
    return np.random.default_rng(np.random.SeedSequence([int(seed), *map(int, key)]))


def _z_sweep_impl(z, token_word, token_doc, doc_period, doc_topic, word_topic,
                  topic_total, A, beta, V, u):
    N = z.shape[0]
    K = topic_total.shape[0]
    vbeta = V * beta
    cum = np.empty(K, dtype=np.float64)
    for i in range(N):
        w = token_word[i]
        d = token_doc[i]
        t = doc_period[d]
        k = z[i]
        doc_topic[d, k] -= 1
        word_topic[w, k] -= 1
        topic_total[k] -= 1
        total = 0.0
        for kk in range(K):
            wt = (doc_topic[d, kk] + A[t, kk]) * (word_topic[w, kk] + beta) \
                / (topic_total[kk] + vbeta)
            total += wt
            cum[kk] = total
        r = u[i] * total
        knew = 0
        while knew < K - 1 and cum[knew] <= r:
            knew += 1
        z[i] = knew
        doc_topic[d, knew] += 1
        word_topic[w, knew] += 1
        topic_total[knew] += 1


try:
    from numba import njit

    _z_sweep = njit(cache=True)(_z_sweep_impl)
except ImportError:  # pragma: no cover - numba is a declared dependency
    _z_sweep = _z_sweep_impl


def z_conditional(doc_counts, prior_weights, word_counts, topic_totals, beta, V):
    """Normalized conditional over topics for one token, counts excluding it."""
    w = (
        (np.asarray(doc_counts, dtype=float) + prior_weights)
        * (np.asarray(word_counts, dtype=float) + beta)
        / (np.asarray(topic_totals, dtype=float) + V * beta)
    )
    return w / w.sum()


def metropolis_step(current, log_target, propose, rng, lp_current=None):
    """One symmetric-proposal Metropolis update in log space.

    Returns (value, accepted, log_target(value)). The proposal density must
    satisfy q(x|y) = q(y|x); no Hastings correction is applied.
    """
    if lp_current is None:
        lp_current = log_target(current)
    if math.isnan(lp_current):
        raise InvariantError("log target is NaN at the current value")
    if lp_current == -math.inf:
        raise InvariantError("chain is outside the target support")
    proposal = propose(current, rng)
    lp_new = log_target(proposal)
    if math.isnan(lp_new):
        raise InvariantError("log target returned NaN at a proposal")
    if lp_new == -math.inf:
        return current, False, lp_current
    if rng.random() < math.exp(min(0.0, lp_new - lp_current)):
        return proposal, True, lp_new
    return current, False, lp_current


@dataclass
class SamplerDiagnostics:
    proposed: dict = field(default_factory=lambda: {"alpha": 0, "pi": 0, "eta": 0})
    accepted: dict = field(default_factory=lambda: {"alpha": 0, "pi": 0, "eta": 0})
    iterations: list = field(default_factory=list)
    log_joint_trace: list = field(default_factory=list)
    rate_trace: list = field(default_factory=list)
    wall_times: list = field(default_factory=list)  # in-memory only, never serialized

    def tally(self, block: str, accepted: bool) -> None:
        self.proposed[block] += 1
        if accepted:
            self.accepted[block] += 1

    def acceptance_rates(self) -> dict:
        return {
            b: (self.accepted[b] / self.proposed[b]) if self.proposed[b] else float("nan")
            for b in self.proposed
        }

    def record(self, iteration: int, lj: float, seconds: float) -> None:
        self.iterations.append(iteration)
        self.log_joint_trace.append(lj)
        self.rate_trace.append(self.acceptance_rates())
        self.wall_times.append(seconds)

    def to_dict(self) -> dict:
        # wall times are nondeterministic and are deliberately dropped
        return {
            "proposed": dict(self.proposed),
            "accepted": dict(self.accepted),
            "iterations": list(self.iterations),
            "log_joint_trace": list(self.log_joint_trace),
            "rate_trace": [
                {b: (None if math.isnan(r) else r) for b, r in rates.items()}
                for rates in self.rate_trace
            ],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "SamplerDiagnostics":
        d = cls()
        d.proposed = dict(data["proposed"])
        d.accepted = dict(data["accepted"])
        d.iterations = list(data["iterations"])
        d.log_joint_trace = list(data["log_joint_trace"])
        d.rate_trace = [
            {b: (float("nan") if r is None else r) for b, r in rates.items()}
            for rates in data["rate_trace"]
        ]
        d.wall_times = [0.0] * len(d.iterations)
        return d


def initialize_state(corpus: Corpus, config: ModelConfig, rng: np.random.Generator,
                     mode: str = "gclda") -> ChainState:
    """Uniform-random assignments; alpha and lambda from their priors;
    pi_tilde rows at the base weights; eta at zero."""
    flat = corpus.flat()
    N = flat.token_word.shape[0]
    T, K, p = corpus.T, config.K, corpus.p
    z = rng.integers(K, size=N, dtype=np.int64)
    if mode == "lda":
        alpha = np.full(T, config.lda_alpha_total, dtype=float)
        pi_tilde = np.full((T, K), 1.0 / K)
        lam = 1.0
    else:
        alpha = rng.gamma(config.alpha_prior_shape, 1.0 / config.alpha_prior_rate, size=T)
        pi_tilde = np.tile(config.resolved_pi0(), (T, 1))
        lam = float(rng.gamma(config.lambda_prior_shape, 1.0 / config.lambda_prior_rate))
    eta = np.zeros((K, p))
    counts = recompute_counts(corpus, z, K)
    return ChainState(z=z, alpha=alpha, pi_tilde=pi_tilde, eta=eta, lam=lam, counts=counts)


def gibbs_sweep_z(state: ChainState, flat: FlatCorpus, config: ModelConfig,
                  rng: np.random.Generator) -> None:
    """Resample every token's topic from its collapsed conditional."""
    N = state.z.shape[0]
    u = rng.random(N)
    A = state.alpha[:, None] * state.pi_tilde
    _z_sweep(
        state.z, flat.token_word, flat.token_doc, flat.doc_period,
        state.counts.doc_topic, state.counts.word_topic, state.counts.topic_total,
        A, config.beta, state.counts.word_topic.shape[0], u,
    )


def alpha_log_target(state: ChainState, t: int, flat: FlatCorpus, config: ModelConfig):
    """Closure over everything but alpha_t itself."""
    docs_t = flat.docs_in_period[t]
    rows = state.counts.doc_topic[docs_t]
    J = flat.doc_len[docs_t]
    n_t = rows.shape[0]
    pt_row = state.pi_tilde[t]
    shape, rate = config.alpha_prior_shape, config.alpha_prior_rate

    def target(aval: float) -> float:
        if aval <= 0.0:
            return -math.inf
        v = (shape - 1.0) * math.log(aval) - rate * aval
        if n_t:
            a = aval * pt_row
            v += float(gammaln(rows + a).sum() - gammaln(J + aval).sum())
            v += n_t * float(gammaln(aval) - gammaln(a).sum())
        return v

    return target


def update_alpha(state: ChainState, t: int, flat: FlatCorpus, config: ModelConfig,
                 rng: np.random.Generator, diag: SamplerDiagnostics | None = None,
                 step: float | None = None) -> None:
    s = config.s_alpha if step is None else step
    target = alpha_log_target(state, t, flat, config)

    def propose(cur, r):
        return cur + r.uniform(-s, s)

    new, accepted, _ = metropolis_step(float(state.alpha[t]), target, propose, rng)
    state.alpha[t] = new
    if diag is not None:
        diag.tally("alpha", accepted)


def pi_row_log_target(state: ChainState, t: int, flat: FlatCorpus, config: ModelConfig,
                      covariates: np.ndarray):
    """Closure over everything but row t of pi_tilde."""
    docs_t = flat.docs_in_period[t]
    rows = state.counts.doc_topic[docs_t]
    n_t = rows.shape[0]
    alpha_t = float(state.alpha[t])
    shift = covariates @ state.eta.T  # (T, K)
    eps = config.epsilon_min
    lam = state.lam
    T = state.pi_tilde.shape[0]
    gp = config.gamma * config.resolved_pi0()

    def target(row: np.ndarray) -> float:
        if row.min() < eps:
            return -math.inf
        pi_row = row - shift[t]
        if pi_row.min() < eps:
            return -math.inf
        v = 0.0
        if n_t:
            a = alpha_t * row
            v += float(gammaln(rows + a).sum()) - n_t * float(gammaln(a).sum())
        if t > 0:
            v -= lam * float(np.abs(pi_row - (state.pi_tilde[t - 1] - shift[t - 1])).sum())
        if t < T - 1:
            v -= lam * float(np.abs((state.pi_tilde[t + 1] - shift[t + 1]) - pi_row).sum())
        if t == 0:
            v += float(((gp - 1.0) * np.log(pi_row)).sum())
        return v

    return target


def pair_transfer(vec: np.ndarray, k: int, k2: int, delta: float) -> np.ndarray:
    out = vec.copy()
    out[k] += delta
    out[k2] -= delta
    return out


def update_pi_tilde(state: ChainState, t: int, flat: FlatCorpus, config: ModelConfig,
                    covariates: np.ndarray, rng: np.random.Generator,
                    diag: SamplerDiagnostics | None = None,
                    step: float | None = None) -> None:
    """K sum-preserving pairwise mass transfers on row t of pi_tilde."""
    s = config.s_pi if step is None else step
    K = config.K
    target = pi_row_log_target(state, t, flat, config, covariates)
    lp_cur = target(state.pi_tilde[t])
    for _ in range(K):
        k = int(rng.integers(K))
        k2 = (k + 1 + int(rng.integers(K - 1))) % K
        delta = rng.uniform(-s, s)
        prop = pair_transfer(state.pi_tilde[t], k, k2, delta)
        new, accepted, lp_cur = metropolis_step(
            state.pi_tilde[t], target, lambda c, r: prop, rng, lp_current=lp_cur
        )
        state.pi_tilde[t] = new
        if diag is not None:
            diag.tally("pi", accepted)


def eta_log_target(state: ChainState, config: ModelConfig, covariates: np.ndarray):
    """Closure over everything but eta.

    Because pi_t = pi_tilde_t - eta . y_t, a move in eta shifts every
    implied pi row, so the walk terms and the first-period Dirichlet prior
    both enter alongside the L1 penalty.
    """
    eps = config.epsilon_min
    lam = state.lam
    T = state.pi_tilde.shape[0]
    gp = config.gamma * config.resolved_pi0()
    penalty = config.eta_penalty

    def target(eta_mat: np.ndarray) -> float:
        pi = state.pi_tilde - covariates @ eta_mat.T
        if pi.min() < eps:
            return -math.inf
        v = -penalty * float(np.abs(eta_mat).sum())
        if T > 1:
            v -= lam * float(np.abs(np.diff(pi, axis=0)).sum())
        v += float(((gp - 1.0) * np.log(pi[0])).sum())
        return v

    return target


def update_eta(state: ChainState, config: ModelConfig, covariates: np.ndarray,
               rng: np.random.Generator, diag: SamplerDiagnostics | None = None,
               step: float | None = None) -> None:
    """Per covariate column, one zero-sum pairwise transfer between two rows."""
    s = config.s_eta if step is None else step
    K = config.K
    p = state.eta.shape[1]
    target = eta_log_target(state, config, covariates)
    lp_cur = target(state.eta)
    for j in range(p):
        k = int(rng.integers(K))
        k2 = (k + 1 + int(rng.integers(K - 1))) % K
        delta = rng.uniform(-s, s)
        prop = state.eta.copy()
        prop[k, j] += delta
        prop[k2, j] -= delta
        new, accepted, lp_cur = metropolis_step(
            state.eta, target, lambda c, r: prop, rng, lp_current=lp_cur
        )
        state.eta = new
        if diag is not None:
            diag.tally("eta", accepted)


def update_lambda(state: ChainState, config: ModelConfig, covariates: np.ndarray,
                  rng: np.random.Generator) -> None:
    """Exact conjugate draw: Gamma((T-1)K + a0, S + b0) with S the walk's L1 length."""
    T, K = state.pi_tilde.shape
    if T > 1:
        pi = state.implied_pi(covariates)
        S = float(np.abs(np.diff(pi, axis=0)).sum())
        shape = (T - 1) * K + config.lambda_prior_shape
        rate = S + config.lambda_prior_rate
    else:
        shape, rate = config.lambda_prior_shape, config.lambda_prior_rate
    state.lam = float(rng.gamma(shape, 1.0 / rate))


def sweep(state: ChainState, corpus: Corpus, config: ModelConfig,
          rng: np.random.Generator, mode: str = "gclda",
          diag: SamplerDiagnostics | None = None, steps: dict | None = None) -> None:
    """One full scan: z, then per-period alpha and pi_tilde, then eta, then lambda."""
    flat = corpus.flat()
    gibbs_sweep_z(state, flat, config, rng)
    if mode == "lda":
        return
    cov = corpus.covariates
    s_alpha = steps["alpha"] if steps else None
    s_pi = steps["pi"] if steps else None
    s_eta = steps["eta"] if steps else None
    for t in range(corpus.T):
        update_alpha(state, t, flat, config, rng, diag, s_alpha)
        update_pi_tilde(state, t, flat, config, cov, rng, diag, s_pi)
    update_eta(state, config, cov, rng, diag, s_eta)
    update_lambda(state, config, cov, rng)


class Chain:
    """A single MCMC chain with deterministic seeding and checkpoint/resume."""

    def __init__(self, corpus: Corpus, config: ModelConfig, mode: str = "gclda",
                 corpus_digest: str | None = None):
        if mode not in ("gclda", "lda"):
            raise InputError(f"unknown mode {mode!r}")
        config.validate()
        corpus.validate()
        if corpus.T < 1:
            raise InputError("corpus has no periods")
        self.corpus = corpus
        self.config = config
        self.mode = mode
        self.corpus_digest = corpus_digest
        self.rng = substream(config.seed, STREAM_SWEEP)
        self.state = initialize_state(corpus, config, substream(config.seed, STREAM_INIT), mode)
        self.iteration = 0
        self.steps = {"alpha": config.s_alpha, "pi": config.s_pi, "eta": config.s_eta}
        self.diag = SamplerDiagnostics()
        self.samples: list[ChainState] = []
        self._tune_base = {"alpha": (0, 0), "pi": (0, 0), "eta": (0, 0)}

    @classmethod
    def resume(cls, corpus: Corpus, checkpoint: dict) -> "Chain":
        if checkpoint.get("kind") != "checkpoint":
            raise InputError("not a checkpoint container")
        config = ModelConfig.from_dict(checkpoint["config"])
        chain = cls(corpus, config, checkpoint["mode"], checkpoint.get("corpus_digest"))
        chain.state = ChainState.from_dict(checkpoint["state"], corpus, config.K)
        chain.rng.bit_generator.state = checkpoint["rng_state"]
        chain.iteration = int(checkpoint["iteration"])
        chain.steps = dict(checkpoint["steps"])
        chain.diag = SamplerDiagnostics.from_dict(checkpoint["diag"])
        chain.samples = [
            ChainState.from_dict(s, corpus, config.K) for s in checkpoint["samples"]
        ]
        chain._tune_base = {b: tuple(v) for b, v in checkpoint["tune_base"].items()}
        return chain

    def checkpoint(self) -> dict:
        from .model import CHECKPOINT_FORMAT_VERSION

        return {
            "format_version": CHECKPOINT_FORMAT_VERSION,
            "kind": "checkpoint",
            "mode": self.mode,
            "config": self.config.to_dict(),
            "corpus_digest": self.corpus_digest,
            "iteration": self.iteration,
            "state": self.state.to_dict(),
            "rng_state": self.rng.bit_generator.state,
            "steps": dict(self.steps),
            "tune_base": {b: list(v) for b, v in self._tune_base.items()},
            "diag": self.diag.to_dict(),
            "samples": [s.to_dict() for s in self.samples],
        }

    def _autotune(self) -> None:
        for block in ("alpha", "pi", "eta"):
            prop0, acc0 = self._tune_base[block]
            dp = self.diag.proposed[block] - prop0
            da = self.diag.accepted[block] - acc0
            if dp == 0:
                continue
            rate = da / dp
            if rate > TUNE_TARGET_HIGH:
                self.steps[block] = min(self.steps[block] * 1.25, 10.0)
            elif rate < TUNE_TARGET_LOW:
                self.steps[block] = max(self.steps[block] * 0.8, 1e-8)
            self._tune_base[block] = (self.diag.proposed[block], self.diag.accepted[block])

    def run(self, stop_after: int | None = None, checkpoint_cb=None, on_sample=None):
        """Advance until `config.iterations` sweeps (or `stop_after` more sweeps).

        Retains every `thin`-th post-burn-in state, or hands it to `on_sample`
        instead when given. Returns (samples, diagnostics).
        """
        cfg = self.config
        done_this_call = 0
        while self.iteration < cfg.iterations:
            if stop_after is not None and done_this_call >= stop_after:
                break
            t0 = time.perf_counter()
            sweep(self.state, self.corpus, cfg, self.rng, self.mode, self.diag, self.steps)
            self.iteration += 1
            done_this_call += 1
            if cfg.autotune and self.mode == "gclda" and self.iteration <= cfg.burn_in \
                    and self.iteration % TUNE_INTERVAL == 0:
                self._autotune()
            if self.iteration > cfg.burn_in and (self.iteration - cfg.burn_in) % cfg.thin == 0:
                dt = time.perf_counter() - t0
                lj = log_joint(self.state, self.corpus, cfg)
                self.diag.record(self.iteration, lj, dt)
                if on_sample is not None:
                    on_sample(self.state)
                else:
                    self.samples.append(self.state.clone())
            if checkpoint_cb is not None and self.iteration % cfg.checkpoint_interval == 0:
                checkpoint_cb(self)
        return self.samples, self.diag


def run_chain(corpus: Corpus, config: ModelConfig, mode: str = "gclda",
              on_sample=None) -> tuple[list[ChainState], SamplerDiagnostics]:
    """Run a full chain from scratch; deterministic given config.seed."""
    chain = Chain(corpus, config, mode)
    return chain.run(on_sample=on_sample)
