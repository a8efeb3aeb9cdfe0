"""Latent state, configuration, sufficient statistics, and the joint density.

The target density has the per-document topic mixtures and the topic-word
distributions integrated out, leaving (Z, alpha, pi_tilde, eta, lambda).
Baseline per-period topic weights pi_t follow a Laplace random walk; the
realized weights are pi_tilde_t = pi_t + eta . y_t with zero-sum eta columns,
so every pi_tilde row stays on the simplex.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln

from .corpus import Corpus
from .errors import InputError, InvariantError

CHECKPOINT_FORMAT_VERSION = 1
SAMPLES_FORMAT_VERSION = 1

ETA_COLSUM_TOL = 1e-10
PI_ROWSUM_TOL = 1e-8


@dataclass
class ModelConfig:
    """Hyperparameters and sampler tuning. Defaults follow the reference setup."""

    K: int = 50
    beta: float = 0.01
    gamma: float = 1.0
    pi0: np.ndarray | None = None  # None -> uniform
    alpha_prior_shape: float = 1.0
    alpha_prior_rate: float = 1.0
    lambda_prior_shape: float = 1.0
    lambda_prior_rate: float = 1.0
    eta_penalty: float = 0.01
    iterations: int = 5000
    burn_in: int = 1000
    thin: int = 10
    seed: int = 0
    s_alpha: float = 0.1
    s_pi: float = 0.01
    s_eta: float = 0.01
    epsilon_min: float = 1e-6
    autotune: bool = True
    lda_alpha_total: float = 50.0  # LDA mode uses alpha = (50/K, ..., 50/K)
    checkpoint_interval: int = 500
    particles: int = 20
    top_words: int = 10

    def __post_init__(self):
        if self.pi0 is not None:
            self.pi0 = np.asarray(self.pi0, dtype=float)

    def resolved_pi0(self) -> np.ndarray:
        if self.pi0 is None:
            return np.full(self.K, 1.0 / self.K)
        return self.pi0

    def validate(self) -> None:
        if self.K < 2:
            raise InputError(f"K must be >= 2, got {self.K}")
        if self.beta <= 0 or self.gamma <= 0:
            raise InputError("beta and gamma must be positive")
        pi0 = self.resolved_pi0()
        if pi0.shape != (self.K,) or np.any(pi0 <= 0) or abs(pi0.sum() - 1.0) > 1e-9:
            raise InputError("pi0 must be a positive length-K vector summing to 1")
        for name in ("alpha_prior_shape", "alpha_prior_rate", "lambda_prior_shape",
                     "lambda_prior_rate", "eta_penalty", "s_alpha", "s_pi", "s_eta",
                     "lda_alpha_total"):
            if getattr(self, name) <= 0:
                raise InputError(f"{name} must be positive")
        if self.iterations < 1 or not (0 <= self.burn_in < self.iterations):
            raise InputError("need 0 <= burn_in < iterations")
        if self.thin < 1:
            raise InputError("thin must be a positive integer")
        if not (0.0 < self.epsilon_min < 1.0 / self.K):
            raise InputError("epsilon_min must lie in (0, 1/K)")
        if self.checkpoint_interval < 1 or self.particles < 1 or self.top_words < 1:
            raise InputError("checkpoint_interval, particles, top_words must be >= 1")

    def to_dict(self) -> dict:
        d = {k: v for k, v in self.__dict__.items() if k != "pi0"}
        d["pi0"] = None if self.pi0 is None else self.pi0.tolist()
        return d

    @classmethod
    def from_dict(cls, data: dict) -> "ModelConfig":
        data = dict(data)
        pi0 = data.pop("pi0", None)
        cfg = cls(**data)
        cfg.pi0 = None if pi0 is None else np.asarray(pi0, dtype=float)
        return cfg


@dataclass
class CountMatrices:
    doc_topic: np.ndarray  # (D, K)
    word_topic: np.ndarray  # (V, K)
    topic_total: np.ndarray  # (K,)

    def copy(self) -> "CountMatrices":
        return CountMatrices(
            self.doc_topic.copy(), self.word_topic.copy(), self.topic_total.copy()
        )

    def equals(self, other: "CountMatrices") -> bool:
        return (
            np.array_equal(self.doc_topic, other.doc_topic)
            and np.array_equal(self.word_topic, other.word_topic)
            and np.array_equal(self.topic_total, other.topic_total)
        )


def recompute_counts(corpus: Corpus, z: np.ndarray, K: int) -> CountMatrices:
    """Count matrices built from scratch from the assignment vector."""
    flat = corpus.flat()
    N = flat.token_word.shape[0]
    z = np.asarray(z)
    if z.shape != (N,):
        raise InputError(f"assignment vector has length {z.shape}, expected ({N},)")
    D = flat.doc_len.shape[0]
    V = corpus.V
    doc_topic = np.zeros((D, K), dtype=np.int64)
    word_topic = np.zeros((V, K), dtype=np.int64)
    topic_total = np.zeros(K, dtype=np.int64)
    np.add.at(doc_topic, (flat.token_doc, z), 1)
    np.add.at(word_topic, (flat.token_word, z), 1)
    np.add.at(topic_total, z, 1)
    return CountMatrices(doc_topic, word_topic, topic_total)


def increment(counts: CountMatrices, doc: int, word: int, topic: int) -> None:
    counts.doc_topic[doc, topic] += 1
    counts.word_topic[word, topic] += 1
    counts.topic_total[topic] += 1


def decrement(counts: CountMatrices, doc: int, word: int, topic: int) -> None:
    if (
        counts.doc_topic[doc, topic] < 1
        or counts.word_topic[word, topic] < 1
        or counts.topic_total[topic] < 1
    ):
        raise InvariantError(
            f"decrement below zero at doc={doc} word={word} topic={topic}"
        )
    counts.doc_topic[doc, topic] -= 1
    counts.word_topic[word, topic] -= 1
    counts.topic_total[topic] -= 1


@dataclass
class ChainState:
    z: np.ndarray  # (N,) flat token-topic assignments
    alpha: np.ndarray  # (T,)
    pi_tilde: np.ndarray  # (T, K)
    eta: np.ndarray  # (K, p)
    lam: float
    counts: CountMatrices

    def implied_pi(self, covariates: np.ndarray) -> np.ndarray:
        """pi_t = pi_tilde_t - eta . y_t for every period."""
        return self.pi_tilde - covariates @ self.eta.T

    def clone(self) -> "ChainState":
        return ChainState(
            z=self.z.copy(),
            alpha=self.alpha.copy(),
            pi_tilde=self.pi_tilde.copy(),
            eta=self.eta.copy(),
            lam=self.lam,
            counts=self.counts.copy(),
        )

    def validate(self, corpus: Corpus, config: ModelConfig) -> None:
        eps = config.epsilon_min
        if np.any(self.alpha <= 0) or self.lam <= 0:
            raise InvariantError("alpha and lambda must be positive")
        if np.any(self.pi_tilde < eps):
            raise InvariantError("pi_tilde entry below the positivity floor")
        if np.max(np.abs(self.pi_tilde.sum(axis=1) - 1.0)) > PI_ROWSUM_TOL:
            raise InvariantError("pi_tilde row does not sum to 1")
        if np.max(np.abs(self.eta.sum(axis=0)), initial=0.0) > ETA_COLSUM_TOL:
            raise InvariantError("eta column sum deviates from 0")
        if np.any(self.implied_pi(corpus.covariates) < eps):
            raise InvariantError("implied pi entry below the positivity floor")
        fresh = recompute_counts(corpus, self.z, config.K)
        if not fresh.equals(self.counts):
            raise InvariantError("count matrices inconsistent with assignments")

    def to_dict(self) -> dict:
        return {
            "z": self.z.tolist(),
            "alpha": self.alpha.tolist(),
            "pi_tilde": self.pi_tilde.tolist(),
            "eta": self.eta.tolist(),
            "lambda": self.lam,
        }

    @classmethod
    def from_dict(cls, data: dict, corpus: Corpus, K: int) -> "ChainState":
        z = np.asarray(data["z"], dtype=np.int64)
        return cls(
            z=z,
            alpha=np.asarray(data["alpha"], dtype=float),
            pi_tilde=np.asarray(data["pi_tilde"], dtype=float),
            eta=np.asarray(data["eta"], dtype=float),
            lam=float(data["lambda"]),
            counts=recompute_counts(corpus, z, K),
        )


def gamma_logpdf(x: float, shape: float, rate: float) -> float:
    return shape * np.log(rate) - gammaln(shape) + (shape - 1.0) * np.log(x) - rate * x


def log_joint(state: ChainState, corpus: Corpus, config: ModelConfig) -> float:
    """Log of the unnormalized posterior over (Z, alpha, pi_tilde, eta, lambda).

    Mixtures and topic-word distributions are integrated out. States outside
    the support (positivity floors, off-simplex rows, nonzero eta column sums)
    get -inf rather than an exception.
    """
    eps = config.epsilon_min
    K, beta = config.K, config.beta
    T, V = corpus.T, corpus.V
    pt = state.pi_tilde
    if np.any(pt < eps) or np.any(state.alpha <= 0) or state.lam <= 0:
        return -np.inf
    if np.max(np.abs(pt.sum(axis=1) - 1.0)) > PI_ROWSUM_TOL:
        return -np.inf
    if state.eta.size and np.max(np.abs(state.eta.sum(axis=0))) > 1e-8:
        return -np.inf
    pi = state.implied_pi(corpus.covariates)
    if np.any(pi < eps):
        return -np.inf

    flat = corpus.flat()
    total = 0.0
    # collapsed Dirichlet-multinomial document terms
    a = state.alpha[:, None] * pt  # (T, K)
    doc_a = a[flat.doc_period]  # (D, K)
    total += float(gammaln(state.counts.doc_topic + doc_a).sum() - gammaln(doc_a).sum())
    total += float(
        gammaln(state.alpha[flat.doc_period]).sum()
        - gammaln(flat.doc_len + state.alpha[flat.doc_period]).sum()
    )
    # collapsed topic-word terms
    total += float(K * (gammaln(V * beta) - V * gammaln(beta)))
    total += float(
        gammaln(state.counts.word_topic + beta).sum()
        - gammaln(state.counts.topic_total + V * beta).sum()
    )
    # Dirichlet prior on the first period's baseline weights
    gp = config.gamma * config.resolved_pi0()
    total += float(gammaln(config.gamma) - gammaln(gp).sum() + ((gp - 1.0) * np.log(pi[0])).sum())
    # Laplace random-walk terms
    if T > 1:
        walk = np.abs(np.diff(pi, axis=0)).sum()
        total += float((T - 1) * K * np.log(state.lam / 2.0) - state.lam * walk)
    # parameter priors
    total += float(
        sum(gamma_logpdf(av, config.alpha_prior_shape, config.alpha_prior_rate)
            for av in state.alpha)
    )
    total += gamma_logpdf(state.lam, config.lambda_prior_shape, config.lambda_prior_rate)
    total += float(-config.eta_penalty * np.abs(state.eta).sum())
    return float(total)


@dataclass
class PosteriorSummary:
    """Point estimates derived from retained posterior samples."""

    model: str
    phi_hat: np.ndarray  # (K, V)
    pi_bar: np.ndarray  # (K,) mean of pi over periods and samples
    pi_bar_t: np.ndarray  # (T, K)
    pi_tilde_bar: np.ndarray  # (T, K)
    eta_hat: np.ndarray  # (K, p)
    rho: np.ndarray  # (K, p)
    alpha_hat: np.ndarray  # (T,)
    lambda_hat: float
    prior_weights: np.ndarray  # (T, K) per-period document prior alpha_hat_t * pi_tilde_bar_t
    top_word_ids: list  # K ranked index lists
    top_words: list  # K ranked term lists
    n_samples: int = 0


def save_samples(
    path: str,
    samples: list[ChainState],
    config: ModelConfig,
    mode: str,
    corpus_digest: str,
) -> None:
    payload = {
        "format_version": SAMPLES_FORMAT_VERSION,
        "kind": "samples",
        "mode": mode,
        "config": config.to_dict(),
        "corpus_digest": corpus_digest,
        "samples": [s.to_dict() for s in samples],
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, sort_keys=True)
        fh.write("\n")


def load_samples(path: str, corpus: Corpus) -> tuple[list[ChainState], ModelConfig, str, str]:
    with open(path, encoding="utf-8") as fh:
        payload = json.load(fh)
    if payload.get("kind") != "samples":
        raise InputError(f"{path} is not a samples artifact")
    if payload.get("format_version") != SAMPLES_FORMAT_VERSION:
        raise InputError(f"unsupported samples format version {payload.get('format_version')}")
    config = ModelConfig.from_dict(payload["config"])
    samples = [ChainState.from_dict(s, corpus, config.K) for s in payload["samples"]]
    return samples, config, payload["mode"], payload["corpus_digest"]
