"""Feature-based linear-chain CRF.

Scores of a tag path ``y`` for a sentence with emission matrix ``E`` (n x C)::

    s(y) = start[y0] + sum_i E[i, y_i] + sum_i trans[y_{i-1}, y_i] + end[y_{n-1}]

Training maximises ``sum log P(y|x) - l1 |w|_1 - l2 |w|_2^2`` with OWL-QN.
"""

from __future__ import annotations

import functools
import json
import os
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
import scipy.sparse as sp

from .corpus import Sentence, TagSet

FORMAT_VERSION = 1


class CrfTrainingError(RuntimeError):
    pass


# -- features ------------------------------------------------------------------

def cap_class(word: str) -> str:
    letters = [ch for ch in word if ch.isalpha()]
    if not any(ch.isupper() for ch in letters):
        return "lower"
    if len(letters) > 1 and all(ch.isupper() for ch in letters):
        return "upper"
    if word[0].isupper() and not any(ch.isupper() for ch in word[1:]):
        return "init"
    return "mixed"


def _token_attrs(word: str, pos: str | None) -> list[str]:
    attrs = [
        "lower=" + word.lower(),
        "cap=" + cap_class(word),
        "digit=" + ("1" if word.isdigit() else "0"),
    ]
    if pos is not None:
        attrs += ["pos=" + pos, "genpos=" + pos[0]]
    return attrs


def _features_at(words: Sequence[str], pos: Sequence[str | None], position: int) -> list[str]:
    n = len(words)
    w = words[position]
    low = w.lower()
    feats = ["bias"] + _token_attrs(w, pos[position])
    feats += ["suf3=" + low[-3:], "suf2=" + low[-2:]]
    if position == 0:
        feats.append("BOS")
    if position == n - 1:
        feats.append("EOS")
    if position > 0:
        feats += ["-1:" + a for a in _token_attrs(words[position - 1], pos[position - 1])]
        if position == 1:
            feats.append("-1:BOS")
    else:
        feats.append("-1:<s>")
    if position < n - 1:
        feats += ["+1:" + a for a in _token_attrs(words[position + 1], pos[position + 1])]
        if position == n - 2:
            feats.append("+1:EOS")
    else:
        feats.append("+1:</s>")
    # dict.fromkeys keeps order and drops duplicates (suf2 == suf3 on short words)
    return list(dict.fromkeys(feats))


def extract_features(sentence: Sentence, position: int) -> list[str]:
    """Binary feature names for one token: the token's own attributes and
    suffixes, boundary indicators, and the neighbours' attributes."""
    return _features_at(sentence.words, sentence.pos, position)


@functools.lru_cache(maxsize=100_000)
def _sentence_features(words: tuple[str, ...], pos: tuple[str | None, ...]) -> tuple[tuple[str, ...], ...]:
    return tuple(tuple(_features_at(words, pos, i)) for i in range(len(words)))


def sentence_features(sentence: Sentence) -> tuple[tuple[str, ...], ...]:
    return _sentence_features(tuple(sentence.words), tuple(sentence.pos))


def build_feature_index(sentences: Sequence[Sentence]) -> dict[str, int]:
    index: dict[str, int] = {}
    for s in sentences:
        for feats in sentence_features(s):
            for f in feats:
                if f not in index:
                    index[f] = len(index)
    return index


def feature_matrix(sentences: Sequence[Sentence], index: dict[str, int]) -> sp.csr_matrix:
    """Binary token x feature matrix; features missing from ``index`` are dropped."""
    indptr = [0]
    cols: list[int] = []
    for s in sentences:
        for feats in sentence_features(s):
            cols.extend(index[f] for f in feats if f in index)
            indptr.append(len(cols))
    data = np.ones(len(cols))
    return sp.csr_matrix((data, np.asarray(cols, dtype=np.int64), np.asarray(indptr)),
                         shape=(len(indptr) - 1, len(index)))


# -- inference on score arrays -------------------------------------------------

def _lse(a: np.ndarray, axis: int) -> np.ndarray:
    m = np.max(a, axis=axis, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    out = np.log(np.sum(np.exp(a - m), axis=axis, keepdims=True)) + m
    return np.squeeze(out, axis=axis)


def viterbi(emis: np.ndarray, trans: np.ndarray, start: np.ndarray, end: np.ndarray) -> tuple[list[int], float]:
    """Best path and its unnormalised score; ties go to the lower tag index."""
    n, C = emis.shape
    delta = start + emis[0]
    back = np.zeros((n, C), dtype=np.int64)
    for t in range(1, n):
        cand = delta[:, None] + trans
        back[t] = np.argmax(cand, axis=0)
        delta = cand[back[t], np.arange(C)] + emis[t]
    final = delta + end
    best = int(np.argmax(final))
    path = [best]
    for t in range(n - 1, 0, -1):
        path.append(int(back[t, path[-1]]))
    return path[::-1], float(final[best])


def forward_backward(emis: np.ndarray, trans: np.ndarray, start: np.ndarray, end: np.ndarray):
    """Returns ``(log Z, alpha, beta)`` for a single sentence in log space."""
    n, C = emis.shape
    alpha = np.empty((n, C))
    beta = np.empty((n, C))
    alpha[0] = start + emis[0]
    for t in range(1, n):
        alpha[t] = _lse(alpha[t - 1][:, None] + trans, axis=0) + emis[t]
    beta[n - 1] = end
    for t in range(n - 2, -1, -1):
        beta[t] = _lse(trans + (emis[t + 1] + beta[t + 1])[None, :], axis=1)
    log_z = float(_lse(alpha[n - 1] + end, axis=0))
    return log_z, alpha, beta


def path_score(tags: Sequence[int], emis, trans, start, end) -> float:
    s = start[tags[0]] + end[tags[-1]]
    s += sum(emis[i, t] for i, t in enumerate(tags))
    s += sum(trans[a, b] for a, b in zip(tags[:-1], tags[1:]))
    return float(s)


# -- batched inference ---------------------------------------------------------

@dataclass
class _Batch:
    lengths: np.ndarray        # (B,)
    mask: np.ndarray           # (B, T) bool
    rows: np.ndarray           # flat token -> batch row
    cols: np.ndarray           # flat token -> position
    token_slice: slice         # slice into the flat token arrays


def _make_batches(lengths: Sequence[int], max_batch: int = 512) -> tuple[np.ndarray, list[_Batch]]:
    """Group sentences of similar length; returns the sentence order used for
    the flat token layout and the batches over it."""
    lengths = np.asarray(lengths)
    order = np.argsort(lengths, kind="stable")
    batches = []
    offset = 0
    for b0 in range(0, len(order), max_batch):
        idx = order[b0:b0 + max_batch]
        lens = lengths[idx]
        T = int(lens.max())
        mask = np.arange(T)[None, :] < lens[:, None]
        rows, cols = np.nonzero(mask)
        ntok = int(lens.sum())
        batches.append(_Batch(lens, mask, rows, cols, slice(offset, offset + ntok)))
        offset += ntok
    return order, batches


def _batch_forward_backward(E, mask, trans, start, end):
    """Log-space forward/backward over a padded batch (reference path)."""
    B, T, C = E.shape
    alpha = np.empty((B, T, C))
    beta = np.empty((B, T, C))
    alpha[:, 0] = start + E[:, 0]
    for t in range(1, T):
        new = _lse(alpha[:, t - 1, :, None] + trans[None], axis=1) + E[:, t]
        alpha[:, t] = np.where(mask[:, t, None], new, alpha[:, t - 1])
    log_z = _lse(alpha[:, T - 1] + end, axis=1)
    beta[:, T - 1] = end
    for t in range(T - 2, -1, -1):
        new = _lse(trans[None] + (E[:, t + 1] + beta[:, t + 1])[:, None, :], axis=2)
        beta[:, t] = np.where(mask[:, t + 1, None], new, end)
    return log_z, alpha, beta


def _scaled_forward_backward(E, mask, trans, start, end):
    """Forward/backward with per-step normalisation instead of log-sum-exp.

    Returns ``(log_z, node, edge_sum, start_marg, end_marg)`` where ``node`` is
    the (B, T, C) marginal tensor (zero on padding) and ``edge_sum`` the pair
    marginals summed over the batch.
    """
    B, T, C = E.shape
    lengths = mask.sum(axis=1)
    last = lengths - 1
    rows = np.arange(B)
    gmax = E.max(axis=2)
    G = np.exp(E - gmax[:, :, None])
    tmax = trans.max()
    M = np.exp(trans - tmax)
    smax, emax = start.max(), end.max()
    e_vec = np.exp(end - emax)

    a = np.empty((B, T, C))
    log_c = np.zeros((B, T))
    a0 = np.exp(start - smax) * G[:, 0]
    c0 = a0.sum(axis=1)
    a[:, 0] = a0 / c0[:, None]
    log_c[:, 0] = np.log(c0)
    c = np.ones((B, T))
    c[:, 0] = c0
    for t in range(1, T):
        at = (a[:, t - 1] @ M) * G[:, t]
        ct = at.sum(axis=1)
        m = mask[:, t]
        ct = np.where(m, ct, 1.0)
        a[:, t] = np.where(m[:, None], at / ct[:, None], a[:, t - 1])
        c[:, t] = ct
        log_c[:, t] = np.log(ct)
    z_end = a[:, T - 1] @ e_vec
    log_z = (log_c.sum(axis=1) + np.log(z_end) + smax + emax
             + (gmax * mask).sum(axis=1) + last * tmax)

    b = np.empty((B, T, C))
    b_end = e_vec[None, :] / z_end[:, None]
    b[:, T - 1] = b_end
    for t in range(T - 2, -1, -1):
        bt = ((G[:, t + 1] * b[:, t + 1]) @ M.T) / c[:, t + 1, None]
        b[:, t] = np.where(mask[:, t + 1, None], bt, b_end)

    node = a * b * mask[:, :, None]
    if T > 1:
        right = G[:, 1:] * b[:, 1:] / c[:, 1:, None] * mask[:, 1:, None]
        edge_sum = M * (a[:, :-1].reshape(-1, C).T @ right.reshape(-1, C))
    else:
        edge_sum = np.zeros((C, C))
    return log_z, node, edge_sum, node[:, 0].sum(axis=0), node[rows, last].sum(axis=0)


def _batch_viterbi(E, mask, trans, start, end):
    B, T, C = E.shape
    delta = start + E[:, 0]
    back = np.zeros((B, T, C), dtype=np.int64)
    ident = np.broadcast_to(np.arange(C), (B, C))
    for t in range(1, T):
        cand = delta[:, :, None] + trans[None]
        bp = np.argmax(cand, axis=1)
        new = np.take_along_axis(cand, bp[:, None, :], axis=1)[:, 0] + E[:, t]
        m = mask[:, t, None]
        back[:, t] = np.where(m, bp, ident)
        delta = np.where(m, new, delta)
    final = delta + end
    best = np.argmax(final, axis=1)
    scores = final[np.arange(B), best]
    paths = np.empty((B, T), dtype=np.int64)
    paths[:, T - 1] = best
    for t in range(T - 1, 0, -1):
        paths[:, t - 1] = back[np.arange(B), t, paths[:, t]]
    return paths, scores


# -- model ---------------------------------------------------------------------

@dataclass
class CrfModel:
    tagset: TagSet
    features: dict[str, int]
    emission: np.ndarray     # (F, C)
    transition: np.ndarray   # (C, C), [prev, next]
    start: np.ndarray        # (C,)
    end: np.ndarray          # (C,)
    l1: float = 0.1
    l2: float = 0.1
    max_iter: int = 100
    iterations_run: int = 0

    @property
    def n_tags(self) -> int:
        return self.tagset.size

    def emission_scores(self, sentence: Sentence) -> np.ndarray:
        X = feature_matrix([sentence], self.features)
        return np.asarray(X @ self.emission)

    # single-sentence API
    def viterbi_decode(self, sentence: Sentence) -> tuple[list[str], float]:
        path, score = viterbi(self.emission_scores(sentence), self.transition, self.start, self.end)
        return self.tagset.decode(path), score

    def log_partition(self, sentence: Sentence) -> float:
        return forward_backward(self.emission_scores(sentence), self.transition, self.start, self.end)[0]

    def sequence_log_prob(self, sentence: Sentence) -> float:
        _, best = self.viterbi_decode(sentence)
        return min(0.0, best - self.log_partition(sentence))

    def token_marginals(self, sentence: Sentence) -> np.ndarray:
        log_z, alpha, beta = forward_backward(
            self.emission_scores(sentence), self.transition, self.start, self.end)
        return np.exp(alpha + beta - log_z)

    # batched API used by the AL loop
    def decode_many(self, sentences: Sequence[Sentence]) -> tuple[list[list[str]], np.ndarray]:
        """Viterbi tags and best-path normalised log-probabilities for many sentences."""
        if not sentences:
            return [], np.zeros(0)
        X = feature_matrix(sentences, self.features)
        flat = np.asarray(X @ self.emission)
        lengths = [len(s) for s in sentences]
        offsets = np.concatenate([[0], np.cumsum(lengths)])
        order, batches = _make_batches(lengths)
        tags: list[list[str]] = [[] for _ in sentences]
        logp = np.zeros(len(sentences))
        b0 = 0
        for batch in batches:
            ids = order[b0:b0 + len(batch.lengths)]
            b0 += len(ids)
            B, T = batch.mask.shape
            E = np.zeros((B, T, self.n_tags))
            tok = np.concatenate([np.arange(offsets[i], offsets[i + 1]) for i in ids])
            E[batch.rows, batch.cols] = flat[tok]
            paths, scores = _batch_viterbi(E, batch.mask, self.transition, self.start, self.end)
            log_z = _scaled_forward_backward(E, batch.mask, self.transition, self.start, self.end)[0]
            for r, sid in enumerate(ids):
                tags[sid] = self.tagset.decode(paths[r, :batch.lengths[r]])
                logp[sid] = min(0.0, scores[r] - log_z[r])
        return tags, logp

    def predict(self, sentences: Sequence[Sentence]) -> list[list[str]]:
        return self.decode_many(sentences)[0]

    def sequence_log_probs(self, sentences: Sequence[Sentence]) -> np.ndarray:
        return self.decode_many(sentences)[1]

    # persistence
    def to_dict(self) -> dict:
        return {
            "format": "al_seqtag.crf",
            "version": FORMAT_VERSION,
            "tagset": {"labels": list(self.tagset.labels), "scheme": self.tagset.scheme},
            "features": sorted(self.features, key=self.features.__getitem__),
            "emission": self.emission.tolist(),
            "transition": self.transition.tolist(),
            "start": self.start.tolist(),
            "end": self.end.tolist(),
            "l1": self.l1, "l2": self.l2, "max_iter": self.max_iter,
            "iterations_run": self.iterations_run,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CrfModel":
        if d.get("format") != "al_seqtag.crf" or d.get("version") != FORMAT_VERSION:
            raise ValueError("not a version-%d CRF model file" % FORMAT_VERSION)
        C = len(d["tagset"]["labels"])
        emission = np.asarray(d["emission"], dtype=float).reshape(len(d["features"]), C)
        return cls(
            TagSet(tuple(d["tagset"]["labels"]), d["tagset"]["scheme"]),
            {f: i for i, f in enumerate(d["features"])},
            emission,
            np.asarray(d["transition"], dtype=float),
            np.asarray(d["start"], dtype=float),
            np.asarray(d["end"], dtype=float),
            d["l1"], d["l2"], d["max_iter"], d.get("iterations_run", 0),
        )

    def save(self, path: str | os.PathLike) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh)

    @classmethod
    def load(cls, path: str | os.PathLike) -> "CrfModel":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


# -- training ------------------------------------------------------------------

class _Objective:
    """Negative log-likelihood of a labelled set and its gradient, with the
    parameter vector laid out as [emission (F*C), transition (C*C), start, end]."""

    def __init__(self, X: sp.csr_matrix, y: np.ndarray, lengths: Sequence[int], n_tags: int):
        self.C = n_tags
        self.F = X.shape[1]
        lengths = np.asarray(lengths)
        self.order, self.batches = _make_batches(lengths)
        offsets = np.concatenate([[0], np.cumsum(lengths)])
        # re-lay tokens in batch order so each batch is a contiguous slice
        perm = np.concatenate([np.arange(offsets[i], offsets[i + 1]) for i in self.order])
        self.X = X[perm].tocsr()
        self.XT = self.X.T.tocsr()
        self.y = y[perm]
        C = n_tags
        self.Y = np.zeros((len(self.y), C))
        self.Y[np.arange(len(self.y)), self.y] = 1.0
        # observed counts for the non-emission parameters
        self.obs_trans = np.zeros((C, C))
        self.obs_start = np.zeros(C)
        self.obs_end = np.zeros(C)
        for batch in self.batches:
            yb = np.zeros(batch.mask.shape, dtype=np.int64)
            yb[batch.rows, batch.cols] = self.y[batch.token_slice]
            batch.y = yb  # type: ignore[attr-defined]
            np.add.at(self.obs_start, yb[:, 0], 1.0)
            np.add.at(self.obs_end, yb[np.arange(len(yb)), batch.lengths - 1], 1.0)
            pair = batch.mask[:, 1:]
            np.add.at(self.obs_trans, (yb[:, :-1][pair], yb[:, 1:][pair]), 1.0)
        self.n_params = self.F * C + C * C + 2 * C

    def unpack(self, w: np.ndarray):
        F, C = self.F, self.C
        W = w[:F * C].reshape(F, C)
        trans = w[F * C:F * C + C * C].reshape(C, C)
        start = w[F * C + C * C:F * C + C * C + C]
        end = w[F * C + C * C + C:]
        return W, trans, start, end

    def __call__(self, w: np.ndarray) -> tuple[float, np.ndarray]:
        W, trans, start, end = self.unpack(w)
        C = self.C
        flat = np.asarray(self.X @ W)
        gold = float(np.sum(flat * self.Y) + np.sum(self.obs_trans * trans)
                     + self.obs_start @ start + self.obs_end @ end)
        P = np.zeros_like(flat)
        exp_trans = np.zeros((C, C))
        exp_start = np.zeros(C)
        exp_end = np.zeros(C)
        total_log_z = 0.0
        for batch in self.batches:
            B, T = batch.mask.shape
            E = np.zeros((B, T, C))
            E[batch.rows, batch.cols] = flat[batch.token_slice]
            log_z, node, edge, m_start, m_end = _scaled_forward_backward(
                E, batch.mask, trans, start, end)
            total_log_z += float(log_z.sum())
            P[batch.token_slice] = node[batch.rows, batch.cols]
            exp_start += m_start
            exp_end += m_end
            exp_trans += edge
        nll = total_log_z - gold
        gW = np.asarray(self.XT @ (P - self.Y))
        grad = np.concatenate([gW.ravel(), (exp_trans - self.obs_trans).ravel(),
                               exp_start - self.obs_start, exp_end - self.obs_end])
        return nll, grad


def _pseudo_gradient(w: np.ndarray, g: np.ndarray, l1: float) -> np.ndarray:
    pg = np.where(w > 0, g + l1, np.where(w < 0, g - l1, 0.0))
    at0 = w == 0
    pg = np.where(at0 & (g + l1 < 0), g + l1, pg)
    pg = np.where(at0 & (g - l1 > 0), g - l1, pg)
    return pg


def owlqn(fun: Callable[[np.ndarray], tuple[float, np.ndarray]], x0: np.ndarray, l1: float,
          max_iter: int = 100, memory: int = 10, tol: float = 1e-5, past: int = 10):
    """Orthant-wise limited-memory quasi-Newton minimisation of
    ``fun(x) + l1 * |x|_1`` where ``fun`` returns ``(value, gradient)``.

    Returns ``(x, objective, iterations)``.
    """
    x = x0.copy()
    f, g = fun(x)
    if not np.isfinite(f):
        raise CrfTrainingError("non-finite objective at the starting point")
    F = f + l1 * np.abs(x).sum()
    s_hist: list[np.ndarray] = []
    y_hist: list[np.ndarray] = []
    history = [F]
    it = 0
    for it in range(1, max_iter + 1):
        pg = _pseudo_gradient(x, g, l1)
        if not np.any(pg):
            it -= 1
            break
        # two-loop recursion
        q = -pg
        alphas = []
        for s, y in zip(reversed(s_hist), reversed(y_hist)):
            a = (s @ q) / (y @ s)
            alphas.append(a)
            q = q - a * y
        if s_hist:
            q = q * (s_hist[-1] @ y_hist[-1]) / (y_hist[-1] @ y_hist[-1])
        for (s, y), a in zip(zip(s_hist, y_hist), reversed(alphas)):
            b = (y @ q) / (y @ s)
            q = q + (a - b) * s
        d = np.where(q * pg < 0, q, 0.0)
        if not np.any(d):
            d = -pg
        orthant = np.where(x != 0, np.sign(x), np.sign(-pg))

        step = 1.0 if s_hist else 1.0 / max(np.linalg.norm(pg), 1e-12)
        accepted = False
        for _ in range(30):
            x_new = x + step * d
            x_new = np.where(np.sign(x_new) == orthant, x_new, 0.0)
            f_new, g_new = fun(x_new)
            F_new = f_new + l1 * np.abs(x_new).sum()
            if np.isfinite(F_new) and F_new <= F + 1e-4 * (pg @ (x_new - x)):
                accepted = True
                break
            step *= 0.5
        if not accepted:
            if not np.isfinite(f_new):
                raise CrfTrainingError("non-finite objective during line search")
            it -= 1
            break
        s_vec, y_vec = x_new - x, g_new - g
        if s_vec @ y_vec > 1e-12:
            s_hist.append(s_vec)
            y_hist.append(y_vec)
            if len(s_hist) > memory:
                s_hist.pop(0)
                y_hist.pop(0)
        x, f, g, F = x_new, f_new, g_new, F_new
        history.append(F)
        if len(history) > past and (history[-past - 1] - F) / max(abs(F), 1.0) < tol:
            break
    return x, F, it


def train_crf(sentences: Sequence[Sentence], tagset: TagSet, l1: float = 0.1, l2: float = 0.1,
              max_iter: int = 100, seed: int = 0) -> CrfModel:
    """Fit a CRF on labelled sentences.

    The optimiser is deterministic, so ``seed`` does not influence the result;
    it is accepted so every tagger shares one training signature.
    """
    del seed
    if not sentences:
        raise ValueError("need at least one labelled sentence")
    index = build_feature_index(sentences)
    X = feature_matrix(sentences, index)
    y = np.concatenate([tagset.encode(s.tags) for s in sentences])
    obj = _Objective(X, y, [len(s) for s in sentences], tagset.size)

    def fun(w):
        nll, grad = obj(w)
        return nll + l2 * (w @ w), grad + 2.0 * l2 * w

    w, final, iters = owlqn(fun, np.zeros(obj.n_params), l1, max_iter=max_iter)
    if not np.isfinite(final):
        raise CrfTrainingError("non-finite objective after training")
    W, trans, start, end = obj.unpack(w)
    return CrfModel(tagset, index, W.copy(), trans.copy(), start.copy(), end.copy(),
                    l1, l2, max_iter, iters)


def log_likelihood_and_grad(model: CrfModel, sentences: Sequence[Sentence]) -> tuple[float, np.ndarray]:
    """Unregularised log-likelihood of ``sentences`` under ``model`` and its
    gradient w.r.t. the flat parameter vector (emission, transition, start, end)."""
    X = feature_matrix(sentences, model.features)
    y = np.concatenate([model.tagset.encode(s.tags) for s in sentences])
    obj = _Objective(X, y, [len(s) for s in sentences], model.n_tags)
    nll, grad = obj(flat_params(model))
    return -nll, -grad


def flat_params(model: CrfModel) -> np.ndarray:
    return np.concatenate([model.emission.ravel(), model.transition.ravel(), model.start, model.end])


def with_params(model: CrfModel, w: np.ndarray) -> CrfModel:
    F, C = model.emission.shape
    return CrfModel(
        model.tagset, model.features,
        w[:F * C].reshape(F, C).copy(),
        w[F * C:F * C + C * C].reshape(C, C).copy(),
        w[F * C + C * C:F * C + C * C + C].copy(),
        w[F * C + C * C + C:].copy(),
        model.l1, model.l2, model.max_iter, model.iterations_run,
    )
