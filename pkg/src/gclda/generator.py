"""Forward simulation from the generative process, and held-out splitting."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .corpus import Corpus, Vocabulary
from .errors import InputError
from .model import ChainState, recompute_counts

TRUTH_FORMAT_VERSION = 1


def _dirichlet(rng: np.random.Generator, a: np.ndarray) -> np.ndarray:
    """Dirichlet draw that tolerates zero entries (mass exactly zero there)."""
    g = rng.gamma(np.maximum(a, 0.0), 1.0)
    total = g.sum()
    if total <= 0.0:
        raise InputError("Dirichlet parameter vector has no positive entries")
    return g / total


def _categorical(rng: np.random.Generator, cum: np.ndarray, size: int) -> np.ndarray:
    u = rng.random(size) * cum[-1]
    idx = np.searchsorted(cum, u, side="right")
    return np.minimum(idx, cum.shape[0] - 1).astype(np.int64)


@dataclass
class GeneratorSpec:
    """Ground-truth parameters for forward simulation.

    phi and pi1 may be omitted, in which case they are drawn from the
    Dir(beta, ..., beta) and Dir(gamma * pi0) priors. The covariate series is
    either given (T x p) or produced by a named rule: "linear" (a standardized
    ramp) or "normal" (iid standard normal).
    """

    K: int
    V: int
    T: int
    p: int
    docs_per_period: int | list
    tokens_per_doc: int | tuple
    lambda_true: float
    eta_true: np.ndarray
    alpha_true: np.ndarray
    y: np.ndarray | None = None
    y_rule: str | None = None
    phi: np.ndarray | None = None
    pi1: np.ndarray | None = None
    beta: float = 0.01
    gamma: float = 1.0
    pi0: np.ndarray | None = None
    seed: int = 0
    epsilon_min: float = 1e-6

    def __post_init__(self):
        self.eta_true = np.asarray(self.eta_true, dtype=float)
        self.alpha_true = np.asarray(self.alpha_true, dtype=float)
        for name in ("y", "phi", "pi1", "pi0"):
            v = getattr(self, name)
            if v is not None:
                setattr(self, name, np.asarray(v, dtype=float))

    def resolved_pi0(self) -> np.ndarray:
        return np.full(self.K, 1.0 / self.K) if self.pi0 is None else self.pi0

    def doc_counts(self) -> list:
        if isinstance(self.docs_per_period, int):
            return [self.docs_per_period] * self.T
        return list(self.docs_per_period)

    def validate(self) -> None:
        if min(self.K, self.V, self.T, self.p) < 1 or self.K < 2:
            raise InputError("need K >= 2 and V, T, p >= 1")
        if self.lambda_true <= 0:
            raise InputError("lambda_true must be positive")
        if self.eta_true.shape != (self.K, self.p):
            raise InputError(f"eta_true must be {self.K} x {self.p}")
        if np.max(np.abs(self.eta_true.sum(axis=0))) > 1e-9:
            raise InputError("eta_true columns must sum to zero")
        if self.alpha_true.shape != (self.T,) or np.any(self.alpha_true <= 0):
            raise InputError("alpha_true must be T positive reals")
        if self.y is None and self.y_rule not in ("linear", "normal"):
            raise InputError("either y or a y_rule of 'linear'/'normal' is required")
        if self.y is not None and self.y.shape != (self.T, self.p):
            raise InputError(f"y must be {self.T} x {self.p}")
        if self.phi is not None:
            if self.phi.shape != (self.K, self.V) or np.any(self.phi < 0):
                raise InputError(f"phi must be a nonnegative {self.K} x {self.V} matrix")
            if np.max(np.abs(self.phi.sum(axis=1) - 1.0)) > 1e-9:
                raise InputError("phi rows must sum to 1")
        if self.pi1 is not None:
            if self.pi1.shape != (self.K,) or np.any(self.pi1 < 0) \
                    or abs(self.pi1.sum() - 1.0) > 1e-9:
                raise InputError("pi1 must be on the simplex")
        if len(self.doc_counts()) != self.T:
            raise InputError("docs_per_period must be an int or a length-T list")

    def to_dict(self) -> dict:
        out = {}
        for k, v in self.__dict__.items():
            out[k] = v.tolist() if isinstance(v, np.ndarray) else v
        if isinstance(out.get("tokens_per_doc"), tuple):
            out["tokens_per_doc"] = list(out["tokens_per_doc"])
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "GeneratorSpec":
        data = dict(data)
        data.pop("kind", None)
        data.pop("format_version", None)
        tpd = data.get("tokens_per_doc")
        if isinstance(tpd, list):
            data["tokens_per_doc"] = tuple(tpd)
        return cls(**data)


@dataclass
class GroundTruth:
    phi: np.ndarray  # (K, V)
    pi: np.ndarray  # (T, K)
    pi_tilde: np.ndarray  # (T, K)
    alpha: np.ndarray  # (T,)
    lambda_true: float
    eta: np.ndarray  # (K, p)
    y: np.ndarray  # (T, p)
    theta: list  # [t][i] -> (K,)
    z: list  # [t][i] -> token topics
    projected: np.ndarray  # (T,) bool, walk steps clipped to the floor

    def to_dict(self) -> dict:
        return {
            "format_version": TRUTH_FORMAT_VERSION,
            "kind": "ground_truth",
            "synthetic": True,
            "phi": self.phi.tolist(),
            "pi": self.pi.tolist(),
            "pi_tilde": self.pi_tilde.tolist(),
            "alpha": self.alpha.tolist(),
            "lambda_true": self.lambda_true,
            "eta": self.eta.tolist(),
            "y": self.y.tolist(),
            "theta": [[th.tolist() for th in bucket] for bucket in self.theta],
            "z": [[zz.tolist() for zz in bucket] for bucket in self.z],
            "projected": self.projected.tolist(),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "GroundTruth":
        if data.get("kind") != "ground_truth":
            raise InputError("not a ground-truth container")
        return cls(
            phi=np.asarray(data["phi"], dtype=float),
            pi=np.asarray(data["pi"], dtype=float),
            pi_tilde=np.asarray(data["pi_tilde"], dtype=float),
            alpha=np.asarray(data["alpha"], dtype=float),
            lambda_true=float(data["lambda_true"]),
            eta=np.asarray(data["eta"], dtype=float),
            y=np.asarray(data["y"], dtype=float),
            theta=[[np.asarray(th, float) for th in bucket] for bucket in data["theta"]],
            z=[[np.asarray(zz, np.int64) for zz in bucket] for bucket in data["z"]],
            projected=np.asarray(data["projected"], dtype=bool),
        )


def _covariates(spec: GeneratorSpec, rng: np.random.Generator) -> np.ndarray:
    if spec.y is not None:
        return spec.y.copy()
    if spec.y_rule == "linear":
        ramp = np.arange(spec.T, dtype=float)
        ramp = (ramp - ramp.mean()) / ramp.std(ddof=1)
        return np.tile(ramp[:, None], (1, spec.p))
    y = rng.standard_normal((spec.T, spec.p))
    return (y - y.mean(axis=0)) / y.std(axis=0, ddof=1)


def _project_to_floor(row: np.ndarray, eps: float) -> tuple[np.ndarray, bool]:
    clipped = np.maximum(row, eps)
    changed = bool(np.any(clipped != row))
    return clipped / clipped.sum(), changed


def simulate_documents(
    rng: np.random.Generator,
    phi: np.ndarray,
    pi_tilde: np.ndarray,
    alpha: np.ndarray,
    doc_counts: list,
    tokens_per_doc,
) -> tuple[list, list, list]:
    """Draw mixtures, topics, and words for every period given fixed weights.

    Returns (documents, theta, z) as nested per-period lists.
    """
    cum_phi = np.cumsum(phi, axis=1)
    documents, thetas, zs = [], [], []
    for t in range(pi_tilde.shape[0]):
        a_t = alpha[t] * pi_tilde[t]
        docs_t, th_t, z_t = [], [], []
        for _ in range(doc_counts[t]):
            if isinstance(tokens_per_doc, int):
                J = tokens_per_doc
            else:
                lo, hi = tokens_per_doc
                J = int(rng.integers(lo, hi + 1))
            theta = _dirichlet(rng, a_t)
            cum_theta = np.cumsum(theta)
            z = _categorical(rng, cum_theta, J)
            x = np.empty(J, dtype=np.int64)
            for k in np.unique(z):
                mask = z == k
                x[mask] = _categorical(rng, cum_phi[k], int(mask.sum()))
            docs_t.append(x)
            th_t.append(theta)
            z_t.append(z)
        documents.append(docs_t)
        thetas.append(th_t)
        zs.append(z_t)
    return documents, thetas, zs


def generate(spec: GeneratorSpec) -> tuple[Corpus, GroundTruth]:
    """Forward-simulate a corpus plus every latent used to produce it.

    The Laplace walk can exit the simplex; steps are clipped to the floor and
    renormalized, and those projections are recorded so recovery experiments
    compare against the projected truth.
    """
    spec.validate()
    rng = np.random.default_rng(np.random.SeedSequence([int(spec.seed)]))
    K, V, T = spec.K, spec.V, spec.T
    phi = spec.phi if spec.phi is not None else np.vstack(
        [_dirichlet(rng, np.full(V, spec.beta)) for _ in range(K)]
    )
    pi1 = spec.pi1 if spec.pi1 is not None else _dirichlet(
        rng, spec.gamma * spec.resolved_pi0()
    )
    y = _covariates(spec, rng)
    pi = np.zeros((T, K))
    projected = np.zeros(T, dtype=bool)
    pi[0] = pi1
    for t in range(1, T):
        step = rng.laplace(0.0, 1.0 / spec.lambda_true, size=K)
        pi[t], projected[t] = _project_to_floor(pi[t - 1] + step, spec.epsilon_min)
    pi_tilde = pi + y @ spec.eta_true.T
    if np.any(pi_tilde < 0.0):
        bad = int(np.argmax(np.any(pi_tilde < 0.0, axis=1)))
        raise InputError(
            f"infeasible spec: covariate shift drives pi_tilde negative in period {bad}"
        )
    documents, thetas, zs = simulate_documents(
        rng, phi, pi_tilde, spec.alpha_true, spec.doc_counts(), spec.tokens_per_doc
    )
    width = max(3, len(str(V - 1)))
    vocab = Vocabulary.from_terms(f"w{i:0{width}d}" for i in range(V))
    twidth = max(3, len(str(T - 1)))
    labels = [f"t{t:0{twidth}d}" for t in range(T)]
    doc_ids = [
        [f"{labels[t]}-d{i:04d}" for i in range(len(documents[t]))] for t in range(T)
    ]
    corpus = Corpus(
        period_labels=labels,
        documents=documents,
        doc_ids=doc_ids,
        covariates=y,
        vocabulary=vocab,
        coverage=1.0,
    )
    corpus.validate()
    truth = GroundTruth(
        phi=phi, pi=pi, pi_tilde=pi_tilde, alpha=spec.alpha_true.copy(),
        lambda_true=spec.lambda_true, eta=spec.eta_true.copy(), y=y,
        theta=thetas, z=zs, projected=projected,
    )
    return corpus, truth


def truth_to_state(truth: GroundTruth, corpus: Corpus, K: int) -> ChainState:
    """Chain state holding the generator's latents (for oracle comparisons)."""
    z = np.concatenate([zz for bucket in truth.z for zz in bucket]) \
        if corpus.num_tokens else np.zeros(0, np.int64)
    return ChainState(
        z=z.astype(np.int64),
        alpha=truth.alpha.copy(),
        pi_tilde=truth.pi_tilde.copy(),
        eta=truth.eta.copy(),
        lam=truth.lambda_true,
        counts=recompute_counts(corpus, z, K),
    )


def held_out_split(
    corpus: Corpus, fraction: float, rng: np.random.Generator
) -> tuple[Corpus, Corpus]:
    """Document-level split, stratified so each period keeps a training doc.

    Single-document periods stay entirely in training (with a warning).
    """
    if not (0.0 < fraction < 1.0):
        raise InputError(f"held-out fraction must be in (0, 1), got {fraction}")
    train_docs, train_ids, test_docs, test_ids = [], [], [], []
    for t in range(corpus.T):
        docs = corpus.documents[t]
        ids = corpus.doc_ids[t]
        n = len(docs)
        if n == 1:
            warnings.warn(
                f"period {corpus.period_labels[t]} has a single document; kept in training"
            )
            mask = np.zeros(1, dtype=bool)
        elif n == 0:
            mask = np.zeros(0, dtype=bool)
        else:
            mask = rng.random(n) < fraction
            if mask.all():
                mask[0] = False
        train_docs.append([d.copy() for d, m in zip(docs, mask) if not m])
        train_ids.append([i for i, m in zip(ids, mask) if not m])
        test_docs.append([d.copy() for d, m in zip(docs, mask) if m])
        test_ids.append([i for i, m in zip(ids, mask) if m])
    if sum(len(d) for d in test_docs) == 0:
        raise InputError("held-out split produced an empty test set")
    make = lambda docs, ids: Corpus(
        period_labels=list(corpus.period_labels),
        documents=docs,
        doc_ids=ids,
        covariates=corpus.covariates.copy(),
        vocabulary=corpus.vocabulary,
        coverage=corpus.coverage,
    )
    return make(train_docs, train_ids), make(test_docs, test_ids)
