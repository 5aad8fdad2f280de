"""Window-based neural tagger with word, locked and last-layer dropout.

Per token: hashed features are summed into an embedding, the embeddings of
the ``2w+1`` window are concatenated, passed through one tanh hidden layer
and a softmax output layer. Gradients are derived by hand.

Dropout sites (all inverted, i.e. scaled by ``1/(1-p)`` when kept):

* word   - drops a token's whole embedding vector
* locked - one mask over embedding dimensions shared by every position of a sentence
* last   - element-wise on the hidden activation feeding the output layer
"""

from __future__ import annotations

import enum
import json
import math
import os
import zlib
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .corpus import Sentence, TagSet
from .crf import cap_class
from .metrics import span_f1

FORMAT_VERSION = 1


class NeuralTrainingError(RuntimeError):
    pass


class McVariant(str, enum.Enum):
    NONE = "NONE"
    MC_WORD = "MC_WORD"
    MC_LOCKED = "MC_LOCKED"
    MC_LAST = "MC_LAST"
    MC_ALL = "MC_ALL"


@dataclass(frozen=True)
class McConfig:
    variant: McVariant = McVariant.NONE
    passes: int = 10

    def __post_init__(self):
        object.__setattr__(self, "variant", McVariant(self.variant))
        if self.variant is not McVariant.NONE and self.passes < 2:
            raise ValueError("MC dropout needs at least 2 passes")

    @property
    def sites(self) -> tuple[bool, bool, bool]:
        """(word, locked, last) stochastic flags."""
        v = self.variant
        return (v in (McVariant.MC_WORD, McVariant.MC_ALL),
                v in (McVariant.MC_LOCKED, McVariant.MC_ALL),
                v in (McVariant.MC_LAST, McVariant.MC_ALL))


@dataclass
class ForwardCounter:
    """Counts sentence-level evaluations of the lower layers and the output head."""

    lower: int = 0
    head: int = 0


@dataclass
class NeuralConfig:
    dim: int = 32
    hidden: int = 64
    window: int = 1
    buckets: int = 2 ** 15
    p_word: float = 0.05
    p_locked: float = 0.5
    p_last: float = 0.5
    epochs: int = 30
    base_batch: int = 16
    learning_rate: float = 1.0
    select_best_epoch: bool = False

    def __post_init__(self):
        for name in ("p_word", "p_locked", "p_last"):
            p = getattr(self, name)
            if not 0.0 <= p < 1.0:
                raise ValueError(f"{name} must be in [0, 1), got {p}")


def effective_batch_size(n_examples: int, base_batch: int) -> int:
    """Shrink the batch so an epoch has at least 50 updates, but not below 4."""
    if math.ceil(n_examples / base_batch) >= 50:
        return base_batch
    return max(4, n_examples // 50)


def _hash_features(word: str) -> tuple[str, ...]:
    low = word.lower()
    return ("w=" + low, "s3=" + low[-3:], "c=" + cap_class(word))


def _bucket(feat: str, buckets: int) -> int:
    return zlib.crc32(feat.encode("utf-8")) % buckets


@dataclass
class _Encoded:
    """Flat token layout of a list of sentences."""

    ids: np.ndarray       # (N, K) hashed feature buckets
    sent: np.ndarray      # (N,) sentence row of each token
    neighbours: list      # per offset in window order: (N,) index or N for padding
    offsets: np.ndarray   # (S+1,) token offsets per sentence

    @property
    def n_tokens(self) -> int:
        return len(self.sent)


def encode(sentences: Sequence[Sentence], buckets: int, window: int) -> _Encoded:
    ids, sent = [], []
    for r, s in enumerate(sentences):
        for w in s.words:
            ids.append([_bucket(f, buckets) for f in _hash_features(w)])
            sent.append(r)
    lengths = np.array([len(s) for s in sentences], dtype=np.int64)
    offsets = np.concatenate([[0], np.cumsum(lengths)])
    N = int(offsets[-1])
    sent_arr = np.asarray(sent, dtype=np.int64)
    pos = np.arange(N) - offsets[sent_arr]
    neighbours = []
    for k in range(-window, window + 1):
        p = pos + k
        ok = (p >= 0) & (p < lengths[sent_arr])
        neighbours.append(np.where(ok, np.arange(N) + k, N))
    return _Encoded(np.asarray(ids, dtype=np.int64).reshape(N, 3), sent_arr, neighbours, offsets)


@dataclass
class NeuralModel:
    tagset: TagSet
    config: NeuralConfig
    emb: np.ndarray
    W1: np.ndarray
    b1: np.ndarray
    W2: np.ndarray
    b2: np.ndarray
    loss_history: list[float] = field(default_factory=list)

    @property
    def n_tags(self) -> int:
        return self.tagset.size

    # -- forward pieces -------------------------------------------------------
    def _embed(self, enc: _Encoded, word_keep=None, locked=None) -> np.ndarray:
        e = self.emb[enc.ids].sum(axis=1)
        if word_keep is not None:
            e = e * word_keep[:, None]
        if locked is not None:
            e = e * locked[enc.sent]
        return e

    def _window(self, enc: _Encoded, e: np.ndarray) -> np.ndarray:
        e_pad = np.vstack([e, np.zeros((1, e.shape[1]))])
        return np.hstack([e_pad[nb] for nb in enc.neighbours])

    def _lower(self, enc: _Encoded, word_keep=None, locked=None):
        e = self._embed(enc, word_keep, locked)
        x = self._window(enc, e)
        h = np.tanh(x @ self.W1 + self.b1)
        return e, x, h

    def _head(self, h: np.ndarray, last=None) -> np.ndarray:
        hd = h * last if last is not None else h
        logits = hd @ self.W2 + self.b2
        logits = logits - logits.max(axis=1, keepdims=True)
        p = np.exp(logits)
        return p / p.sum(axis=1, keepdims=True)

    # -- inference --------------------------------------------------------------
    def predict_proba_many(self, sentences: Sequence[Sentence]) -> list[np.ndarray]:
        if not sentences:
            return []
        enc = encode(sentences, self.config.buckets, self.config.window)
        _, _, h = self._lower(enc)
        P = self._head(h)
        return [P[enc.offsets[r]:enc.offsets[r + 1]] for r in range(len(sentences))]

    def predict_deterministic(self, sentence: Sentence) -> np.ndarray:
        return self.predict_proba_many([sentence])[0]

    def predict(self, sentences: Sequence[Sentence]) -> list[list[str]]:
        return [self.tagset.decode(P.argmax(axis=1)) for P in self.predict_proba_many(sentences)]

    def sequence_log_probs(self, sentences: Sequence[Sentence]) -> np.ndarray:
        """Log-probability of the most likely tag sequence; tokens are
        independent given the input, so this is the sum of per-token maxima."""
        return np.array([float(np.log(P.max(axis=1)).sum())
                         for P in self.predict_proba_many(sentences)])

    def _masks(self, rng: np.random.Generator, M: int, n: int, mc: McConfig):
        cfg = self.config
        word, locked, last = mc.sites
        wk = lk = ls = None
        if word and cfg.p_word > 0:
            wk = (rng.random((M, n)) >= cfg.p_word) / (1.0 - cfg.p_word)
        if locked and cfg.p_locked > 0:
            lk = (rng.random((M, cfg.dim)) >= cfg.p_locked) / (1.0 - cfg.p_locked)
        if last and cfg.p_last > 0:
            ls = (rng.random((M, n, cfg.hidden)) >= cfg.p_last) / (1.0 - cfg.p_last)
        return wk, lk, ls

    def predict_stochastic_many(self, sentences: Sequence[Sentence], mc: McConfig, seed: int,
                                counter: ForwardCounter | None = None,
                                chunk: int = 256) -> list[np.ndarray]:
        """M stochastic passes per sentence; returns one (M, n, C) tensor each.

        Masks for sentence ``s`` come from a generator seeded with
        ``(seed, s.id)``, pass ``m`` taking the m-th slice, so results do not
        depend on pool order or chunking.
        """
        if mc.variant is McVariant.NONE:
            raise ValueError("stochastic prediction needs an MC dropout variant")
        M = mc.passes
        word, locked, last = mc.sites
        out: list[np.ndarray] = []
        for c0 in range(0, len(sentences), chunk):
            sents = sentences[c0:c0 + chunk]
            enc = encode(sents, self.config.buckets, self.config.window)
            masks = [self._masks(np.random.default_rng([seed, s.id]), M, len(s), mc) for s in sents]
            N, S = enc.n_tokens, len(sents)
            res = np.empty((M, N, self.n_tags))
            if not (word or locked):
                # only the head is stochastic: lower layers once per sentence
                _, _, h = self._lower(enc)
                if counter is not None:
                    counter.lower += S
                for m in range(M):
                    ls = None
                    if masks and masks[0][2] is not None:
                        ls = np.concatenate([mk[2][m] for mk in masks])
                    res[m] = self._head(h, ls)
                    if counter is not None:
                        counter.head += S
            else:
                for m in range(M):
                    wk = lk = ls = None
                    if masks[0][0] is not None:
                        wk = np.concatenate([mk[0][m] for mk in masks])
                    if masks[0][1] is not None:
                        lk = np.stack([mk[1][m] for mk in masks])
                    if masks[0][2] is not None:
                        ls = np.concatenate([mk[2][m] for mk in masks])
                    _, _, h = self._lower(enc, wk, lk)
                    res[m] = self._head(h, ls)
                    if counter is not None:
                        counter.lower += S
                        counter.head += S
            out.extend(res[:, enc.offsets[r]:enc.offsets[r + 1]] for r in range(S))
        return out

    def predict_stochastic(self, sentence: Sentence, mc: McConfig, seed: int,
                           counter: ForwardCounter | None = None) -> np.ndarray:
        return self.predict_stochastic_many([sentence], mc, seed, counter)[0]

    # -- training ----------------------------------------------------------------
    def loss_and_grads(self, enc: _Encoded, y: np.ndarray, word_keep=None, locked=None, last=None):
        """Mean token cross-entropy and gradients for one batch."""
        e, x, h = self._lower(enc, word_keep, locked)
        hd = h * last if last is not None else h
        P = self._head(h, last)
        N = len(y)
        loss = -float(np.log(P[np.arange(N), y]).sum()) / N
        dlogits = P.copy()
        dlogits[np.arange(N), y] -= 1.0
        dlogits /= N
        gW2 = hd.T @ dlogits
        gb2 = dlogits.sum(axis=0)
        dh = dlogits @ self.W2.T
        if last is not None:
            dh = dh * last
        dz = dh * (1.0 - h * h)
        gW1 = x.T @ dz
        gb1 = dz.sum(axis=0)
        dx = dz @ self.W1.T
        d = self.config.dim
        de = np.zeros((N + 1, d))
        for k, nb in enumerate(enc.neighbours):
            np.add.at(de, nb, dx[:, k * d:(k + 1) * d])
        de = de[:N]
        if word_keep is not None:
            de = de * word_keep[:, None]
        if locked is not None:
            de = de * locked[enc.sent]
        K = enc.ids.shape[1]
        return loss, {
            "emb_rows": enc.ids.ravel(),
            "emb_grad": np.repeat(de, K, axis=0),
            "W1": gW1, "b1": gb1, "W2": gW2, "b2": gb2,
        }

    def dense_emb_grad(self, grads: dict) -> np.ndarray:
        g = np.zeros_like(self.emb)
        np.add.at(g, grads["emb_rows"], grads["emb_grad"])
        return g

    # -- persistence ---------------------------------------------------------------
    def save(self, path: str | os.PathLike) -> None:
        meta = {
            "format": "al_seqtag.neural", "version": FORMAT_VERSION,
            "tagset": {"labels": list(self.tagset.labels), "scheme": self.tagset.scheme},
            "config": asdict(self.config),
            "loss_history": self.loss_history,
        }
        with open(path, "wb") as fh:
            np.savez(fh, meta=np.array(json.dumps(meta)), emb=self.emb, W1=self.W1,
                     b1=self.b1, W2=self.W2, b2=self.b2)

    @classmethod
    def load(cls, path: str | os.PathLike) -> "NeuralModel":
        with np.load(path) as z:
            meta = json.loads(str(z["meta"]))
            if meta.get("format") != "al_seqtag.neural" or meta.get("version") != FORMAT_VERSION:
                raise ValueError("not a version-%d neural model file" % FORMAT_VERSION)
            return cls(TagSet(tuple(meta["tagset"]["labels"]), meta["tagset"]["scheme"]),
                       NeuralConfig(**meta["config"]), z["emb"], z["W1"], z["b1"], z["W2"], z["b2"],
                       meta["loss_history"])


def init_model(tagset: TagSet, config: NeuralConfig, rng: np.random.Generator) -> NeuralModel:
    d, h, C = config.dim, config.hidden, tagset.size
    fan_in = d * (2 * config.window + 1)
    lim1 = math.sqrt(6.0 / (fan_in + h))
    lim2 = math.sqrt(6.0 / (h + C))
    return NeuralModel(
        tagset, config,
        emb=rng.normal(0.0, 0.1, size=(config.buckets, d)),
        W1=rng.uniform(-lim1, lim1, size=(fan_in, h)),
        b1=np.zeros(h),
        W2=rng.uniform(-lim2, lim2, size=(h, C)),
        b2=np.zeros(C),
    )


def _train_masks(rng: np.random.Generator, cfg: NeuralConfig, enc: _Encoded, n_sent: int):
    N = enc.n_tokens
    wk = lk = ls = None
    if cfg.p_word > 0:
        wk = (rng.random(N) >= cfg.p_word) / (1.0 - cfg.p_word)
    if cfg.p_locked > 0:
        lk = (rng.random((n_sent, cfg.dim)) >= cfg.p_locked) / (1.0 - cfg.p_locked)
    if cfg.p_last > 0:
        ls = (rng.random((N, cfg.hidden)) >= cfg.p_last) / (1.0 - cfg.p_last)
    return wk, lk, ls


def train_neural(sentences: Sequence[Sentence], tagset: TagSet, config: NeuralConfig | None = None,
                 seed: int = 0, dev: Sequence[Sentence] | None = None) -> NeuralModel:
    """Mini-batch SGD on per-token cross-entropy with a linearly decaying
    learning rate. With ``config.select_best_epoch`` and a dev set, the
    parameters of the epoch with the best dev span F1 are kept."""
    config = config or NeuralConfig()
    if not sentences:
        raise ValueError("need at least one labelled sentence")
    rng = np.random.default_rng(seed)
    model = init_model(tagset, config, rng)
    y_all = [tagset.encode(s.tags) for s in sentences]
    batch = effective_batch_size(len(sentences), config.base_batch)
    steps_per_epoch = math.ceil(len(sentences) / batch)
    total = steps_per_epoch * config.epochs
    step = 0
    best = (-1.0, None)

    for epoch in range(config.epochs):
        order = rng.permutation(len(sentences))
        epoch_loss, epoch_tokens = 0.0, 0
        for b0 in range(0, len(order), batch):
            idx = order[b0:b0 + batch]
            enc = encode([sentences[i] for i in idx], config.buckets, config.window)
            y = np.concatenate([y_all[i] for i in idx])
            wk, lk, ls = _train_masks(rng, config, enc, len(idx))
            loss, g = model.loss_and_grads(enc, y, wk, lk, ls)
            if not math.isfinite(loss):
                raise NeuralTrainingError(f"non-finite loss at epoch {epoch}")
            lr = config.learning_rate * (1.0 - step / total)
            np.add.at(model.emb, g["emb_rows"], -lr * g["emb_grad"])
            model.W1 -= lr * g["W1"]
            model.b1 -= lr * g["b1"]
            model.W2 -= lr * g["W2"]
            model.b2 -= lr * g["b2"]
            step += 1
            epoch_loss += loss * len(y)
            epoch_tokens += len(y)
        model.loss_history.append(epoch_loss / epoch_tokens)
        if config.select_best_epoch and dev:
            f1 = span_f1(model.predict(dev), [s.tags for s in dev], tagset.scheme).f1
            if f1 > best[0]:
                best = (f1, (model.emb.copy(), model.W1.copy(), model.b1.copy(),
                             model.W2.copy(), model.b2.copy()))
    if best[1] is not None:
        model.emb, model.W1, model.b1, model.W2, model.b2 = best[1]
    return model
