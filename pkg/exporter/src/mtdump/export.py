"""Run the language model and the translation model over sentence pairs
and write TDWB dumps.

The language model scores each side monolingually (a leading bos gives
every real token a conditional probability). The translation model is
driven by forced decoding of the human reference: encoder input is
``[src_lang] tokens [eos]``, decoder input ``[start, tgt_lang] tokens
[eos]``, so every decoder position after the first has a realized-token
log-probability and the three attention stacks cover the full sequences.
Raw per-layer, per-head attention is dumped; any averaging happens on
the analysis side.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np
import torch

from .format import (
    ROLE_BOS,
    ROLE_CONTENT,
    ROLE_EOS,
    ROLE_LANG,
    PairDump,
    Track,
    write_manifest,
    write_pair,
)


class ExportError(Exception):
    """A pair (or the whole job) cannot be exported."""


class SequenceTooLong(ExportError):
    """Input exceeds the model's position limit; pair is skipped."""


@dataclass(frozen=True)
class PairEntry:
    pair_id: str
    source: str
    target: str
    src_lang: str
    tgt_lang: str


@dataclass
class ExportJob:
    pairs: list
    out_dir: str
    lm_model: str = "ai-forever/mGPT"
    mt_model: str = "facebook/nllb-200-distilled-600M"
    device: str = "cpu"
    batch_size: int = 1

    def __post_init__(self):
        ids = [p.pair_id for p in self.pairs]
        if len(set(ids)) != len(ids):
            raise ExportError("pair_ids must be unique")


def _encode(tokenizer, text: str):
    """Content ids and char offsets, no special tokens."""
    enc = tokenizer(text, add_special_tokens=False, return_offsets_mapping=True)
    ids = list(enc["input_ids"])
    offsets = [tuple(map(int, o)) for o in enc["offset_mapping"]]
    if not ids:
        raise ExportError("tokenizer produced no tokens")
    return ids, offsets


def _gather_logprobs(logits: torch.Tensor, ids: list) -> np.ndarray:
    """Log-probability of each realized token given its prefix.

    ``logits`` has one row per input position; row t predicts position
    t+1, so the result has len(ids) - 1 entries.
    """
    logprobs = torch.log_softmax(logits[:-1].float(), dim=-1)
    realized = torch.tensor(ids[1:], dtype=torch.long)
    out = logprobs.gather(1, realized.unsqueeze(1)).squeeze(1)
    return out.cpu().numpy().astype(np.float32)


def _stack_attentions(tensors) -> np.ndarray:
    """(layers-tuple of (1, H, R, C)) -> (L, H, R, C) float32."""
    return torch.stack([t[0].float() for t in tensors]).cpu().numpy().astype(np.float32)


def _force_eager_attention(model) -> None:
    try:
        model.set_attn_implementation("eager")
    except AttributeError:
        model.config._attn_implementation = "eager"


class LMScorer:
    """Autoregressive language model wrapper (monolingual surprisal)."""

    def __init__(self, model, tokenizer, device: str = "cpu", name: str = ""):
        self.model = model.to(device).eval()
        self.tokenizer = tokenizer
        self.device = device
        self.name = name or getattr(model.config, "name_or_path", "lm")
        bos = tokenizer.bos_token_id
        self.bos_id = bos if bos is not None else tokenizer.eos_token_id
        if self.bos_id is None:
            raise ExportError("LM tokenizer defines neither bos nor eos")

    @classmethod
    def from_pretrained(cls, name: str, device: str = "cpu") -> "LMScorer":
        from transformers import AutoModelForCausalLM, AutoTokenizer

        return cls(
            AutoModelForCausalLM.from_pretrained(name),
            AutoTokenizer.from_pretrained(name, use_fast=True),
            device=device,
            name=name,
        )

    @property
    def max_length(self) -> int:
        cfg = self.model.config
        return getattr(cfg, "n_positions", None) or getattr(
            cfg, "max_position_embeddings", 1 << 20
        )

    def score(self, text: str) -> tuple[Track, np.ndarray]:
        ids, offsets = _encode(self.tokenizer, text)
        seq = [self.bos_id] + ids
        if len(seq) > self.max_length:
            raise SequenceTooLong(
                f"{len(seq)} LM tokens exceed the limit {self.max_length}"
            )
        with torch.no_grad():
            logits = self.model(
                torch.tensor([seq], device=self.device)
            ).logits[0]
        track = Track(
            tokens=[self.tokenizer.convert_ids_to_tokens(self.bos_id)]
            + self.tokenizer.convert_ids_to_tokens(ids),
            offsets=[(0, 0)] + offsets,
            roles=[ROLE_BOS] + [ROLE_CONTENT] * len(ids),
        )
        return track, _gather_logprobs(logits, seq)


class MTScorer:
    """Encoder-decoder translation model wrapper (forced decoding)."""

    def __init__(self, model, tokenizer, device: str = "cpu", name: str = ""):
        _force_eager_attention(model)  # sdpa kernels do not expose weights
        self.model = model.to(device).eval()
        self.tokenizer = tokenizer
        self.device = device
        self.name = name or getattr(model.config, "name_or_path", "mt")
        cfg = model.config
        enc_layers = getattr(cfg, "encoder_layers", None)
        dec_layers = getattr(cfg, "decoder_layers", None)
        if enc_layers != dec_layers:
            raise ExportError(
                f"dump format carries one layer count; model has "
                f"{enc_layers} encoder vs {dec_layers} decoder layers"
            )
        self.layers = enc_layers
        self.heads = cfg.encoder_attention_heads
        self.eos_id = tokenizer.eos_token_id
        start = getattr(cfg, "decoder_start_token_id", None)
        self.decoder_start_id = start if start is not None else self.eos_id

    @classmethod
    def from_pretrained(cls, name: str, device: str = "cpu") -> "MTScorer":
        from transformers import AutoModelForSeq2SeqLM, AutoTokenizer

        return cls(
            AutoModelForSeq2SeqLM.from_pretrained(name, attn_implementation="eager"),
            AutoTokenizer.from_pretrained(name, use_fast=True),
            device=device,
            name=name,
        )

    @property
    def max_length(self) -> int:
        return getattr(self.model.config, "max_position_embeddings", 1 << 20)

    def lang_id(self, code: str) -> int:
        tid = self.tokenizer.convert_tokens_to_ids(code)
        if tid is None or tid == self.tokenizer.unk_token_id:
            raise ExportError(f"language code {code!r} unknown to the MT tokenizer")
        return tid

    def score(self, source: str, target: str, src_lang: str, tgt_lang: str):
        src_ids, src_offsets = _encode(self.tokenizer, source)
        tgt_ids, tgt_offsets = _encode(self.tokenizer, target)
        enc_ids = [self.lang_id(src_lang)] + src_ids + [self.eos_id]
        dec_ids = [self.decoder_start_id, self.lang_id(tgt_lang)] + tgt_ids + [self.eos_id]
        if max(len(enc_ids), len(dec_ids)) > self.max_length:
            raise SequenceTooLong(
                f"{len(enc_ids)}/{len(dec_ids)} MT tokens exceed the limit "
                f"{self.max_length}"
            )
        with torch.no_grad():
            out = self.model(
                input_ids=torch.tensor([enc_ids], device=self.device),
                decoder_input_ids=torch.tensor([dec_ids], device=self.device),
                output_attentions=True,
                return_dict=True,
            )
        toks = self.tokenizer.convert_ids_to_tokens
        mt_source = Track(
            tokens=toks(enc_ids),
            offsets=[(0, 0)] + src_offsets + [(0, 0)],
            roles=[ROLE_LANG] + [ROLE_CONTENT] * len(src_ids) + [ROLE_EOS],
        )
        mt_target = Track(
            tokens=toks(dec_ids),
            offsets=[(0, 0), (0, 0)] + tgt_offsets + [(0, 0)],
            roles=[ROLE_BOS, ROLE_LANG] + [ROLE_CONTENT] * len(tgt_ids) + [ROLE_EOS],
        )
        return {
            "enc_attn": _stack_attentions(out.encoder_attentions),
            "cross_attn": _stack_attentions(out.cross_attentions),
            "dec_attn": _stack_attentions(out.decoder_attentions),
            "mt_source": mt_source,
            "mt_target": mt_target,
            "mt_target_logprobs": _gather_logprobs(out.logits[0], dec_ids),
        }


def export_pair(lm: LMScorer, mt: MTScorer, entry: PairEntry, out_dir: str) -> dict:
    """Export one pair; returns its manifest record."""
    lm_src_track, lm_src_lp = lm.score(entry.source)
    lm_tgt_track, lm_tgt_lp = lm.score(entry.target)
    scored = mt.score(entry.source, entry.target, entry.src_lang, entry.tgt_lang)
    dump = PairDump(
        pair_id=entry.pair_id,
        source_text=entry.source,
        target_text=entry.target,
        enc_attn=scored["enc_attn"],
        cross_attn=scored["cross_attn"],
        dec_attn=scored["dec_attn"],
        mt_source=scored["mt_source"],
        mt_target=scored["mt_target"],
        lm_source=lm_src_track,
        lm_target=lm_tgt_track,
        lm_source_logprobs=lm_src_lp,
        lm_target_logprobs=lm_tgt_lp,
        mt_target_logprobs=scored["mt_target_logprobs"],
    )
    fname = f"{entry.pair_id}.tdwb"
    write_pair(dump, os.path.join(out_dir, fname))
    return {"pair_id": entry.pair_id, "file": fname}


def run_export(job: ExportJob, lm: LMScorer | None = None,
               mt: MTScorer | None = None) -> dict:
    """Export every pair of a job and write the directory manifest.

    Pairs that exceed model limits or fail tokenization become failure
    records; a job with zero successes is an error.
    """
    os.makedirs(job.out_dir, exist_ok=True)
    lm = lm or LMScorer.from_pretrained(job.lm_model, device=job.device)
    mt = mt or MTScorer.from_pretrained(job.mt_model, device=job.device)
    pairs, failures = [], []
    for entry in job.pairs:
        try:
            pairs.append(export_pair(lm, mt, entry, job.out_dir))
        except ExportError as exc:
            failures.append({"pair_id": entry.pair_id, "reason": str(exc)})
    if not pairs:
        raise ExportError(f"no pair exported; failures: {failures}")
    import transformers

    manifest = {
        "layers": mt.layers,
        "heads": mt.heads,
        "lm_model": lm.name,
        "mt_model": mt.name,
        "lm_tokenizer": lm.name,
        "mt_tokenizer": mt.name,
        "transformers_version": transformers.__version__,
        "pairs": pairs,
        "failures": failures,
    }
    write_manifest(job.out_dir, manifest)
    return manifest
