"""Held-out scoring via the left-to-right estimator, point estimates, and
topic-covariate correlation reporting."""

from __future__ import annotations

import csv
import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .corpus import Corpus
from .errors import InputError
from .model import ChainState, ModelConfig, PosteriorSummary
from .sampler import STREAM_EVAL, substream

RHO_FLOOR = 1e-8


def correlation_scores(summary: PosteriorSummary) -> np.ndarray:
    """rho = eta_hat / pi_bar per topic and covariate; NaN where pi_bar ~ 0."""
    pi_bar = summary.pi_bar
    rho = np.full_like(summary.eta_hat, np.nan)
    ok = pi_bar > RHO_FLOOR
    rho[ok] = summary.eta_hat[ok] / pi_bar[ok, None]
    return rho


def rank_topics(summary: PosteriorSummary) -> np.ndarray:
    """Topic ids ordered by overall prevalence, most common first."""
    return np.argsort(-summary.pi_bar, kind="stable")


def point_estimates(
    samples: list[ChainState], corpus: Corpus, config: ModelConfig, model: str = "gclda"
) -> PosteriorSummary:
    """Posterior means over retained samples; smoothed topic-word point estimate."""
    if not samples:
        raise InputError("no retained samples to summarize")
    K, V, beta = config.K, corpus.V, config.beta
    cov = corpus.covariates
    phi = np.zeros((K, V))
    pi_tilde_bar = np.zeros_like(samples[0].pi_tilde)
    pi_bar_t = np.zeros_like(samples[0].pi_tilde)
    eta_hat = np.zeros_like(samples[0].eta)
    alpha_hat = np.zeros_like(samples[0].alpha)
    lambda_hat = 0.0
    for s in samples:
        phi += (s.counts.word_topic.T + beta) / (s.counts.topic_total[:, None] + V * beta)
        pi_tilde_bar += s.pi_tilde
        pi_bar_t += s.implied_pi(cov)
        eta_hat += s.eta
        alpha_hat += s.alpha
        lambda_hat += s.lam
    n = len(samples)
    phi /= n
    pi_tilde_bar /= n
    pi_bar_t /= n
    eta_hat /= n
    alpha_hat /= n
    lambda_hat /= n
    top_ids = [np.argsort(-phi[k], kind="stable")[: config.top_words] for k in range(K)]
    terms = corpus.vocabulary.terms
    summary = PosteriorSummary(
        model=model,
        phi_hat=phi,
        pi_bar=pi_bar_t.mean(axis=0),
        pi_bar_t=pi_bar_t,
        pi_tilde_bar=pi_tilde_bar,
        eta_hat=eta_hat,
        rho=np.zeros_like(eta_hat),
        alpha_hat=alpha_hat,
        lambda_hat=lambda_hat,
        prior_weights=alpha_hat[:, None] * pi_tilde_bar,
        top_word_ids=[ids.tolist() for ids in top_ids],
        top_words=[[terms[i] for i in ids] for ids in top_ids],
        n_samples=n,
    )
    summary.rho = correlation_scores(summary)
    return summary


def left_to_right_loglik(
    tokens, prior_weights: np.ndarray, phi_hat: np.ndarray, R: int,
    rng: np.random.Generator,
) -> np.ndarray:
    """Sequential particle estimate of per-token predictive log probabilities.

    Each of the R particles resamples its topic history before every position,
    then the position's predictive probability is averaged across particles.
    The sum of the returned values estimates the document log-likelihood.
    """
    tokens = np.asarray(tokens, dtype=np.int64)
    n = tokens.shape[0]
    if n == 0:
        return np.zeros(0)
    if R < 1:
        raise InputError("particle count must be >= 1")
    a = np.asarray(prior_weights, dtype=float)
    if np.any(a <= 0):
        raise InputError("prior weights must be positive")
    A = float(a.sum())
    K = a.shape[0]
    counts = np.zeros((R, K))
    z = np.zeros((R, n), dtype=np.int64)
    ar = np.arange(R)
    out = np.empty(n)

    def draw(weights):
        cum = np.cumsum(weights, axis=1)
        u = rng.random(R) * cum[:, -1]
        return np.minimum((cum <= u[:, None]).sum(axis=1), K - 1)

    for pos in range(n):
        for j in range(pos):
            counts[ar, z[:, j]] -= 1
            new = draw((counts + a) * phi_hat[:, tokens[j]])
            counts[ar, new] += 1
            z[:, j] = new
        pred = ((counts + a) @ phi_hat[:, tokens[pos]]) / (pos + A)
        out[pos] = math.log(pred.mean())
        new = draw((counts + a) * phi_hat[:, tokens[pos]])
        counts[ar, new] += 1
        z[:, pos] = new
    return out


@dataclass
class EvalReport:
    model: str
    particles: int
    period_labels: list
    n_docs: np.ndarray
    n_tokens: np.ndarray
    perplexity: np.ndarray  # NaN for empty test periods
    se: np.ndarray
    overall_perplexity: float
    overall_se: float


def perplexity(
    test_corpus: Corpus,
    summary: PosteriorSummary,
    R: int,
    seed: int,
    threads: int = 1,
) -> EvalReport:
    """Held-out perplexity per period and overall.

    perp = exp(-sum log p(doc) / sum tokens). Documents are scored with their
    period's prior weights; per-document RNG streams are derived from the
    seed and document index, so results do not depend on scheduling.
    """
    T = test_corpus.T
    if summary.prior_weights.shape[0] != T:
        raise InputError("summary and test corpus disagree on the period count")
    jobs = []  # (global index, period, tokens)
    g = 0
    for t in range(T):
        for tokens in test_corpus.documents[t]:
            jobs.append((g, t, tokens))
            g += 1

    def score(job):
        gi, t, tokens = job
        rng = substream(seed, STREAM_EVAL, gi)
        return float(
            left_to_right_loglik(tokens, summary.prior_weights[t], summary.phi_hat, R, rng).sum()
        )

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            lls = list(pool.map(score, jobs))
    else:
        lls = [score(j) for j in jobs]

    n_docs = np.zeros(T, dtype=np.int64)
    n_tokens = np.zeros(T, dtype=np.int64)
    ll_sum = np.zeros(T)
    by_period = [[] for _ in range(T)]
    for (gi, t, tokens), ll in zip(jobs, lls):
        n_docs[t] += 1
        n_tokens[t] += tokens.shape[0]
        ll_sum[t] += ll
        by_period[t].append(ll)

    perp = np.full(T, np.nan)
    se = np.full(T, np.nan)
    for t in range(T):
        if n_docs[t] == 0:
            warnings.warn(f"test period {test_corpus.period_labels[t]} is empty; omitted")
            continue
        perp[t] = math.exp(-ll_sum[t] / n_tokens[t])
        if n_docs[t] > 1:
            s2 = float(np.var(by_period[t], ddof=1))
            se[t] = perp[t] * math.sqrt(n_docs[t] * s2) / n_tokens[t]
        else:
            se[t] = 0.0
    total_ll = float(sum(lls))
    total_tokens = int(n_tokens.sum())
    overall = math.exp(-total_ll / total_tokens)
    if len(lls) > 1:
        s2 = float(np.var(lls, ddof=1))
        overall_se = overall * math.sqrt(len(lls) * s2) / total_tokens
    else:
        overall_se = 0.0
    return EvalReport(
        model=summary.model,
        particles=R,
        period_labels=list(test_corpus.period_labels),
        n_docs=n_docs,
        n_tokens=n_tokens,
        perplexity=perp,
        se=se,
        overall_perplexity=overall,
        overall_se=overall_se,
    )


def write_eval_report(report: EvalReport, path: str) -> None:
    """Per-period rows plus a final 'overall' row; stable column order."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["period", "index", "n_docs", "n_tokens", "perplexity", "se", "model", "particles"])
        for t, label in enumerate(report.period_labels):
            w.writerow([
                label, t, int(report.n_docs[t]), int(report.n_tokens[t]),
                repr(float(report.perplexity[t])), repr(float(report.se[t])),
                report.model, report.particles,
            ])
        w.writerow([
            "overall", "", int(report.n_docs.sum()), int(report.n_tokens.sum()),
            repr(report.overall_perplexity), repr(report.overall_se),
            report.model, report.particles,
        ])


def write_topics_csv(summary: PosteriorSummary, path: str) -> None:
    """Topics ranked by prevalence: rank, topic, pi_bar, rho per covariate, top words."""
    p = summary.eta_hat.shape[1]
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["rank", "topic", "pi_bar"] + [f"rho_{j}" for j in range(p)] + ["top_words"])
        for rank, k in enumerate(rank_topics(summary)):
            w.writerow(
                [rank, int(k), repr(float(summary.pi_bar[k]))]
                + [repr(float(summary.rho[k, j])) for j in range(p)]
                + [" ".join(summary.top_words[k])]
            )


def write_rho_csv(summary: PosteriorSummary, path: str) -> None:
    p = summary.eta_hat.shape[1]
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["topic", "pi_bar"] + [f"eta_{j}" for j in range(p)]
                   + [f"rho_{j}" for j in range(p)])
        for k in range(summary.eta_hat.shape[0]):
            w.writerow(
                [k, repr(float(summary.pi_bar[k]))]
                + [repr(float(summary.eta_hat[k, j])) for j in range(p)]
                + [repr(float(summary.rho[k, j])) for j in range(p)]
            )


def write_pi_series_csv(summary: PosteriorSummary, labels: list, path: str) -> None:
    """Posterior-mean baseline weights over time (pi, then pi_tilde columns)."""
    T, K = summary.pi_bar_t.shape
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["period", "index"] + [f"pi_{k}" for k in range(K)]
                   + [f"pi_tilde_{k}" for k in range(K)])
        for t in range(T):
            w.writerow(
                [labels[t], t]
                + [repr(float(v)) for v in summary.pi_bar_t[t]]
                + [repr(float(v)) for v in summary.pi_tilde_bar[t]]
            )
