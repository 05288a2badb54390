"""Encoder-decoder LSTM translating annotation-language letter sequences
into target-language phone sequences, implemented directly on numpy.

The encoder reads the reversed input (end marker appended) through a stack
of LSTM layers; its final top hidden state is the context vector.  The
decoder receives the previous output symbol one-hot concatenated with the
context at every step, and the output projection sees the top hidden
state, the previous symbol and the context.  Training is plain SGD with
the two-stage learning rate schedule, gradient clipping and teacher
forcing; gradients come from full backpropagation through time and are
finite-difference checked in the test suite.

Decoding offers beam search with shallow bigram fusion (the model and
language-model log probabilities are added step by step) and a sausage
export of the per-step distributions along the greedy path, per-slot
renormalized over phones so the lattice composes cleanly with a bigram
acceptor.
"""

from __future__ import annotations

import base64
import json
import math
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from . import fst, ngram
from .errors import ContractError, DataError, DivergenceError, ParseError

MAX_SEQ_LEN = 64


@dataclass
class TrainingConfig:
    lr_initial: float = 0.4
    lr_after: float = 0.2
    lr_switch_epoch: int = 8  # epochs 1..switch use lr_initial
    batch_size: int = 128
    init_range: float = 0.1
    convergence_threshold: float = 1e-7
    max_epochs: int = 50
    seed: int = 0
    clip_norm: float = 5.0
    max_len: int = MAX_SEQ_LEN
    model_weight: float = 1.0
    lm_weight: float = 1.0

    def __post_init__(self):
        if self.lr_initial <= 0 or self.lr_after <= 0:
            raise ContractError("learning rates must be positive")
        if self.batch_size < 1:
            raise ContractError("batch size must be >= 1")

    def rate_for_epoch(self, epoch: int) -> float:
        return self.lr_initial if epoch <= self.lr_switch_epoch else self.lr_after


@dataclass
class Seq2SeqParams:
    """All network tensors plus the vocabularies they are wired to."""

    in_vocab: fst.SymbolTable
    out_vocab: fst.SymbolTable
    hidden: int
    layers: int
    tensors: dict[str, np.ndarray] = field(repr=False)

    def copy(self) -> "Seq2SeqParams":
        return replace(self, tensors={k: v.copy() for k, v in self.tensors.items()})

    @property
    def in_dim(self) -> int:
        return len(self.in_vocab.symbols)

    @property
    def out_dim(self) -> int:
        return len(self.out_vocab.symbols)

    def phone_ids(self) -> list[int]:
        skip = {fst.EPSILON_ID, self.out_vocab.id(fst.BOS), self.out_vocab.id(fst.EOS)}
        return [i for i in range(self.out_dim) if i not in skip]


@dataclass
class DecoderState:
    h: list[np.ndarray]
    c: list[np.ndarray]
    context: np.ndarray

    def copy(self) -> "DecoderState":
        return DecoderState([v.copy() for v in self.h], [v.copy() for v in self.c], self.context)


@dataclass(frozen=True)
class Hypothesis:
    """Beam entry: phone prefix plus its two score components."""

    labels: tuple[int, ...]
    model_logp: float
    lm_logp: float

    @property
    def combined(self) -> float:
        return self.model_logp + self.lm_logp


@dataclass(frozen=True)
class BeamResult:
    labels: tuple[int, ...]
    model_logp: float
    lm_logp: float
    completed: bool

    @property
    def combined(self) -> float:
        return self.model_logp + self.lm_logp

    def scored_sequence(self) -> fst.ScoredSequence:
        return fst.ScoredSequence(self.labels, -self.combined)


def _sigmoid(z):
    return 1.0 / (1.0 + np.exp(-z))


def init_params(
    in_vocab: fst.SymbolTable,
    out_vocab: fst.SymbolTable,
    config: Optional[TrainingConfig] = None,
    hidden: int = 100,
    layers: int = 2,
) -> Seq2SeqParams:
    """Fresh parameters: weights i.i.d. uniform in [-init_range, init_range]
    from the seeded generator, biases zero except the forget gate at 1."""
    for table in (in_vocab, out_vocab):
        if fst.BOS not in table or fst.EOS not in table or len(table.symbols) < 4:
            raise ContractError("vocabularies must hold at least one symbol plus the markers")
    config = config or TrainingConfig()
    rng = np.random.default_rng(config.seed)
    r = config.init_range
    h = hidden
    tensors: dict[str, np.ndarray] = {}

    def lstm_block(prefix: str, in_dim: int) -> None:
        tensors[f"{prefix}.Wx"] = rng.uniform(-r, r, size=(4 * h, in_dim))
        tensors[f"{prefix}.Wh"] = rng.uniform(-r, r, size=(4 * h, h))
        b = np.zeros(4 * h)
        b[h : 2 * h] = 1.0  # forget gate
        tensors[f"{prefix}.b"] = b

    in_dim = len(in_vocab.symbols)
    out_dim = len(out_vocab.symbols)
    for l in range(layers):
        lstm_block(f"enc{l}", in_dim if l == 0 else h)
    for l in range(layers):
        lstm_block(f"dec{l}", out_dim + h if l == 0 else h)
    tensors["proj.W"] = rng.uniform(-r, r, size=(out_dim, h + out_dim + h))
    tensors["proj.b"] = np.zeros(out_dim)
    return Seq2SeqParams(in_vocab, out_vocab, h, layers, tensors)


def _lstm_forward(Wx, Wh, b, x, h_prev, c_prev):
    n = h_prev.shape[0]
    z = Wx @ x + Wh @ h_prev + b
    i = _sigmoid(z[:n])
    f = _sigmoid(z[n : 2 * n])
    g = np.tanh(z[2 * n : 3 * n])
    o = _sigmoid(z[3 * n :])
    c = f * c_prev + i * g
    tc = np.tanh(c)
    h = o * tc
    return h, c, (x, h_prev, c_prev, i, f, g, o, tc)


def _lstm_backward(Wx, Wh, dh, dc, cache, grads, prefix):
    x, h_prev, c_prev, i, f, g, o, tc = cache
    do = dh * tc
    dc = dc + dh * o * (1.0 - tc * tc)
    di = dc * g
    dg = dc * i
    df = dc * c_prev
    dc_prev = dc * f
    dz = np.concatenate(
        [di * i * (1 - i), df * f * (1 - f), dg * (1 - g * g), do * o * (1 - o)]
    )
    grads[prefix + ".Wx"] += np.outer(dz, x)
    grads[prefix + ".Wh"] += np.outer(dz, h_prev)
    grads[prefix + ".b"] += dz
    dx = Wx.T @ dz
    dh_prev = Wh.T @ dz
    return dx, dh_prev, dc_prev


def _onehot(idx: int, dim: int) -> np.ndarray:
    v = np.zeros(dim)
    v[idx] = 1.0
    return v


def _encoder_forward(p: Seq2SeqParams, input_ids: Sequence[int], want_cache=False):
    eos = p.in_vocab.id(fst.EOS)
    symbols = list(reversed(list(input_ids))) + [eos]
    h = [np.zeros(p.hidden) for _ in range(p.layers)]
    c = [np.zeros(p.hidden) for _ in range(p.layers)]
    caches = []
    for sym in symbols:
        x = _onehot(sym, p.in_dim)
        step_caches = []
        for l in range(p.layers):
            h[l], c[l], cache = _lstm_forward(
                p.tensors[f"enc{l}.Wx"], p.tensors[f"enc{l}.Wh"], p.tensors[f"enc{l}.b"], x, h[l], c[l]
            )
            step_caches.append(cache)
            x = h[l]
        caches.append(step_caches)
    return (h[-1], caches) if want_cache else (h[-1], None)


def encode(p: Seq2SeqParams, input_ids: Sequence[int]) -> np.ndarray:
    """Context vector: top hidden state after reading the reversed input
    plus end marker."""
    ids = list(input_ids)
    if not ids:
        raise ContractError("input sequence is empty")
    for label in ids:
        if not 0 < label < p.in_dim:
            raise DataError(f"input label {label} not in vocabulary", label=label)
    context, _ = _encoder_forward(p, ids)
    return context


def initial_state(p: Seq2SeqParams, context: np.ndarray) -> DecoderState:
    return DecoderState(
        [np.zeros(p.hidden) for _ in range(p.layers)],
        [np.zeros(p.hidden) for _ in range(p.layers)],
        context,
    )


def decoder_step(
    p: Seq2SeqParams, state: DecoderState, y_prev: int, want_cache=False
):
    """One decoder step: new state and the softmax distribution over the
    output vocabulary."""
    y1 = _onehot(y_prev, p.out_dim)
    x = np.concatenate([y1, state.context])
    new_h, new_c, step_caches = [], [], []
    for l in range(p.layers):
        hl, cl, cache = _lstm_forward(
            p.tensors[f"dec{l}.Wx"], p.tensors[f"dec{l}.Wh"], p.tensors[f"dec{l}.b"],
            x, state.h[l], state.c[l],
        )
        new_h.append(hl)
        new_c.append(cl)
        step_caches.append(cache)
        x = hl
    feat = np.concatenate([new_h[-1], y1, state.context])
    logits = p.tensors["proj.W"] @ feat + p.tensors["proj.b"]
    shifted = logits - logits.max()
    expz = np.exp(shifted)
    pmf = expz / expz.sum()
    new_state = DecoderState(new_h, new_c, state.context)
    if want_cache:
        return new_state, pmf, (step_caches, feat)
    return new_state, pmf


def _zero_grads(p: Seq2SeqParams) -> dict[str, np.ndarray]:
    return {k: np.zeros_like(v) for k, v in p.tensors.items()}


def _example_loss_and_grads(p, input_ids, target_ids, grads, max_len):
    """Teacher-forced negative log-likelihood of one pair; accumulates
    gradients in place when grads is not None."""
    if len(input_ids) > max_len or len(target_ids) > max_len:
        raise DataError(
            f"sequence longer than the configured cap of {max_len}",
            input_len=len(input_ids),
            target_len=len(target_ids),
        )
    bos = p.out_vocab.id(fst.BOS)
    eos = p.out_vocab.id(fst.EOS)
    context, enc_caches = _encoder_forward(p, input_ids, want_cache=grads is not None)
    state = initial_state(p, context)
    inputs = [bos] + list(target_ids)
    targets = list(target_ids) + [eos]
    loss = 0.0
    step_records = []
    for y_prev, target in zip(inputs, targets):
        if grads is None:
            state, pmf = decoder_step(p, state, y_prev)
        else:
            state, pmf, (caches, feat) = decoder_step(p, state, y_prev, want_cache=True)
            step_records.append((y_prev, target, pmf, caches, feat))
        loss -= math.log(pmf[target])
    if grads is None:
        return loss

    hidden, layers = p.hidden, p.layers
    out_dim = p.out_dim
    dh_next = [np.zeros(hidden) for _ in range(layers)]
    dc_next = [np.zeros(hidden) for _ in range(layers)]
    dcontext = np.zeros(hidden)
    for y_prev, target, pmf, caches, feat in reversed(step_records):
        dlogits = pmf.copy()
        dlogits[target] -= 1.0
        grads["proj.W"] += np.outer(dlogits, feat)
        grads["proj.b"] += dlogits
        dfeat = p.tensors["proj.W"].T @ dlogits
        dh_top = dfeat[:hidden]
        dcontext += dfeat[hidden + out_dim :]
        dh_next[layers - 1] = dh_next[layers - 1] + dh_top
        dx_above = None
        for l in range(layers - 1, -1, -1):
            dh = dh_next[l] if dx_above is None else dh_next[l] + dx_above
            dx, dh_prev, dc_prev = _lstm_backward(
                p.tensors[f"dec{l}.Wx"], p.tensors[f"dec{l}.Wh"],
                dh, dc_next[l], caches[l], grads, f"dec{l}",
            )
            dh_next[l] = dh_prev
            dc_next[l] = dc_prev
            dx_above = dx
        # layer-0 input was [one-hot(y_prev); context]
        dcontext += dx_above[out_dim:]

    # context is the encoder's final top hidden state
    enc_dh = [np.zeros(hidden) for _ in range(layers)]
    enc_dc = [np.zeros(hidden) for _ in range(layers)]
    enc_dh[layers - 1] = dcontext
    for step_caches in reversed(enc_caches):
        dx_above = None
        for l in range(layers - 1, -1, -1):
            dh = enc_dh[l] if dx_above is None else enc_dh[l] + dx_above
            dx, dh_prev, dc_prev = _lstm_backward(
                p.tensors[f"enc{l}.Wx"], p.tensors[f"enc{l}.Wh"],
                dh, enc_dc[l], step_caches[l], grads, f"enc{l}",
            )
            enc_dh[l] = dh_prev
            enc_dc[l] = dc_prev
            dx_above = dx
    return loss


def loss_and_gradients(
    p: Seq2SeqParams,
    batch: Sequence[tuple[Sequence[int], Sequence[int]]],
    max_len: int = MAX_SEQ_LEN,
):
    """Mean teacher-forced negative log-likelihood over the batch and the
    gradients of every tensor."""
    if not batch:
        raise ContractError("batch is empty")
    grads = _zero_grads(p)
    total = 0.0
    for input_ids, target_ids in batch:
        total += _example_loss_and_grads(p, input_ids, target_ids, grads, max_len)
    n = len(batch)
    for k in grads:
        grads[k] /= n
    return total / n, grads


def batch_loss(p, batch, max_len: int = MAX_SEQ_LEN) -> float:
    if not batch:
        raise ContractError("batch is empty")
    return sum(_example_loss_and_grads(p, x, y, None, max_len) for x, y in batch) / len(batch)


def _clip_gradients(grads: dict[str, np.ndarray], clip_norm: float) -> float:
    total = math.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
    if clip_norm > 0 and total > clip_norm:
        scale = clip_norm / total
        for g in grads.values():
            g *= scale
    return total


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    learning_rate: float
    train_loss: float
    dev_loss: float


def train(
    p: Seq2SeqParams,
    train_set: Sequence[tuple[Sequence[int], Sequence[int]]],
    dev_set: Sequence[tuple[Sequence[int], Sequence[int]]],
    config: TrainingConfig,
) -> tuple[Seq2SeqParams, list[EpochRecord]]:
    """SGD with seeded shuffling, the two-stage learning-rate schedule and
    a relative dev-loss change stopping rule.  Returns fresh parameters and
    the per-epoch history; the input parameters are left untouched."""
    if not train_set or not dev_set:
        raise ContractError("training and dev sets must be nonempty")
    p = p.copy()
    rng = np.random.default_rng(config.seed)
    batch_size = min(config.batch_size, len(train_set))
    history: list[EpochRecord] = []
    prev_dev: Optional[float] = None
    for epoch in range(1, config.max_epochs + 1):
        lr = config.rate_for_epoch(epoch)
        order = rng.permutation(len(train_set))
        epoch_loss = 0.0
        seen = 0
        for lo in range(0, len(order), batch_size):
            batch = [train_set[i] for i in order[lo : lo + batch_size]]
            loss, grads = loss_and_gradients(p, batch, config.max_len)
            if not math.isfinite(loss):
                raise DivergenceError(
                    f"non-finite loss at epoch {epoch}", epoch=epoch, learning_rate=lr
                )
            _clip_gradients(grads, config.clip_norm)
            for k, g in grads.items():
                p.tensors[k] -= lr * g
            epoch_loss += loss * len(batch)
            seen += len(batch)
        dev_loss = batch_loss(p, dev_set, config.max_len)
        if not math.isfinite(dev_loss):
            raise DivergenceError(f"non-finite dev loss at epoch {epoch}", epoch=epoch)
        history.append(EpochRecord(epoch, lr, epoch_loss / seen, dev_loss))
        if prev_dev is not None:
            change = abs(prev_dev - dev_loss) / max(abs(prev_dev), 1e-30)
            if change < config.convergence_threshold:
                break
        prev_dev = dev_loss
    return p, history


def adapt(
    p: Seq2SeqParams,
    target_set: Sequence[tuple[Sequence[int], Sequence[int]]],
    config: TrainingConfig,
    epochs: Optional[int] = None,
) -> tuple[Seq2SeqParams, list[EpochRecord]]:
    """Continue SGD from trained parameters on target-language pairs at the
    post-schedule rate.  Zero epochs returns an identical copy."""
    if not target_set:
        raise ContractError("adaptation set is empty")
    n_epochs = config.max_epochs if epochs is None else epochs
    if n_epochs == 0:
        return p.copy(), []
    adapted_config = replace(
        config,
        lr_initial=config.lr_after,
        lr_switch_epoch=0,
        max_epochs=n_epochs,
        convergence_threshold=0.0,  # run the requested epochs
    )
    return train(p, target_set, target_set, adapted_config)


def beam_decode_with_lm(
    p: Seq2SeqParams,
    input_ids: Sequence[int],
    lm: Optional[ngram.BigramModel],
    beam: int = 4,
    max_len: int = MAX_SEQ_LEN,
    model_weight: float = 1.0,
    lm_weight: float = 1.0,
) -> BeamResult:
    """Beam search over phone prefixes scoring model plus bigram log
    probabilities per step (end transition included).  ``lm=None`` (or
    "uniform") contributes nothing.  Ties break lexicographically; if no
    hypothesis emits the end marker within max_len the best partial one is
    returned flagged."""
    if beam < 1:
        raise ContractError("beam width must be >= 1")
    if isinstance(lm, str):
        if lm != "uniform":
            raise ContractError(f"unknown language model spec {lm!r}")
        lm = None
    if lm is not None and lm.vocab != p.out_vocab:
        raise ContractError("language model and decoder use different phone tables")
    bos = p.out_vocab.id(fst.BOS)
    eos = p.out_vocab.id(fst.EOS)
    phones = p.phone_ids()
    context = encode(p, input_ids)

    def lm_logp(prev: int, nxt: int) -> float:
        if lm is None:
            return 0.0
        prob = lm.cond_prob(prev if prev != bos else lm.bos, nxt if nxt != eos else lm.eos)
        return -math.inf if prob == 0.0 else lm_weight * math.log(prob)

    live: list[tuple[Hypothesis, DecoderState]] = [
        (Hypothesis((), 0.0, 0.0), initial_state(p, context))
    ]
    done: list[Hypothesis] = []
    for step in range(max_len + 1):
        last_round = step == max_len
        candidates: list[tuple[Hypothesis, Optional[DecoderState]]] = []
        for hyp, state in live:
            y_prev = hyp.labels[-1] if hyp.labels else bos
            new_state, pmf = decoder_step(p, state, y_prev)
            options = [eos] if last_round else [eos] + phones
            for y in options:
                if pmf[y] <= 0.0:
                    continue
                lp = lm_logp(y_prev, y)
                if lp == -math.inf:
                    continue
                ext = Hypothesis(
                    hyp.labels if y == eos else hyp.labels + (y,),
                    hyp.model_logp + model_weight * math.log(pmf[y]),
                    hyp.lm_logp + lp,
                )
                if y == eos:
                    done.append(ext)
                else:
                    candidates.append((ext, new_state))
        candidates.sort(key=lambda pair: (-pair[0].combined, pair[0].labels))
        live = [(h, s) for h, s in candidates[:beam]]
        if not live:
            break
    if done:
        best = min(done, key=lambda h: (-h.combined, h.labels))
        return BeamResult(best.labels, best.model_logp, best.lm_logp, True)
    if not live:
        raise DataError("beam search exhausted without any scoreable hypothesis")
    best, _state = min(live, key=lambda pair: (-pair[0].combined, pair[0].labels))
    return BeamResult(best.labels, best.model_logp, best.lm_logp, False)


def greedy_decode(p: Seq2SeqParams, input_ids: Sequence[int], max_len: int = MAX_SEQ_LEN):
    """Stepwise argmax decode; returns the phone ids and the per-step
    distributions along the path."""
    bos = p.out_vocab.id(fst.BOS)
    eos = p.out_vocab.id(fst.EOS)
    phones = p.phone_ids()
    state = initial_state(p, encode(p, input_ids))
    y_prev = bos
    labels: list[int] = []
    pmfs: list[np.ndarray] = []
    for _ in range(max_len):
        state, pmf = decoder_step(p, state, y_prev)
        choices = [eos] + phones
        y = max(choices, key=lambda i: (pmf[i], -i))
        if y == eos:
            break
        labels.append(y)
        pmfs.append(pmf)
        y_prev = y
    return tuple(labels), pmfs


def output_distributions_to_fst(
    p: Seq2SeqParams, input_ids: Sequence[int], max_len: int = MAX_SEQ_LEN
) -> fst.Wfst:
    """Greedy-backbone sausage: one slot per greedy phone step carrying the
    step's distribution renormalized over phones (the stop mass ends the
    machine, so path lengths are fixed and the one-best is the greedy
    decode).  Composes directly with a bigram phone acceptor."""
    labels, pmfs = greedy_decode(p, input_ids, max_len)
    phones = p.phone_ids()
    out = fst.Wfst(p.out_vocab, p.out_vocab)
    out.add_states(len(labels) + 1)
    out.set_start(0)
    for i, pmf in enumerate(pmfs):
        mass = float(sum(pmf[y] for y in phones))
        for y in phones:
            out.add_arc(i, y, y, fst.from_prob(float(pmf[y]) / mass), i + 1)
    out.set_final(len(labels), fst.ONE)
    return out


# -- datasets and checkpoints ----------------------------------------------


def parse_dataset(text: str) -> list[tuple[str, tuple[str, ...]]]:
    """TSV ``letter sequence<TAB>space-separated phones``."""
    pairs = []
    for lineno, line in fst.data_lines(text):
        parts = line.split("\t")
        if len(parts) != 2:
            raise ParseError("expected 'letters<TAB>phones'", line=lineno)
        letters, phones = parts
        if not letters or not phones.split():
            raise ParseError("empty side in dataset pair", line=lineno)
        pairs.append((letters, tuple(phones.split())))
    if not pairs:
        raise ParseError("dataset is empty")
    return pairs


def dataset_tables(pairs) -> tuple[fst.SymbolTable, fst.SymbolTable]:
    in_vocab = ngram.vocab_table(ch for letters, _ in pairs for ch in letters)
    out_vocab = ngram.vocab_table(ph for _, phones in pairs for ph in phones)
    return in_vocab, out_vocab


def encode_dataset(pairs, in_vocab: fst.SymbolTable, out_vocab: fst.SymbolTable):
    return [(in_vocab.ids(letters), out_vocab.ids(phones)) for letters, phones in pairs]


CHECKPOINT_FORMAT = "ptforge-seq2seq"
CHECKPOINT_VERSION = 1


def save_checkpoint(p: Seq2SeqParams, meta: Optional[dict] = None) -> str:
    tensors = {}
    for name, value in sorted(p.tensors.items()):
        arr = np.ascontiguousarray(value, dtype="<f8")
        tensors[name] = {
            "shape": list(arr.shape),
            "dtype": "float64",
            "data": base64.b64encode(arr.tobytes()).decode("ascii"),
        }
    doc = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "meta": meta or {},
        "hidden": p.hidden,
        "layers": p.layers,
        "in_vocab": list(p.in_vocab.symbols[1:]),
        "out_vocab": list(p.out_vocab.symbols[1:]),
        "tensors": tensors,
    }
    return json.dumps(doc, indent=1, sort_keys=True)


def load_checkpoint(text: str) -> tuple[Seq2SeqParams, dict]:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as err:
        raise ParseError(f"checkpoint is not valid JSON: {err}") from None
    if doc.get("format") != CHECKPOINT_FORMAT:
        raise ParseError("not a seq2seq checkpoint")
    if doc.get("version") != CHECKPOINT_VERSION:
        raise ParseError(f"unsupported checkpoint version {doc.get('version')}")
    tensors = {}
    for name, spec in doc["tensors"].items():
        raw = base64.b64decode(spec["data"])
        arr = np.frombuffer(raw, dtype="<f8").reshape(spec["shape"]).copy()
        tensors[name] = arr
    params = Seq2SeqParams(
        fst.SymbolTable(doc["in_vocab"]),
        fst.SymbolTable(doc["out_vocab"]),
        int(doc["hidden"]),
        int(doc["layers"]),
        tensors,
    )
    return params, doc.get("meta", {})
