import pytest
import torch
from tokenizers import Tokenizer, models, pre_tokenizers
from transformers import (
    GPT2Config,
    GPT2LMHeadModel,
    M2M100Config,
    M2M100ForConditionalGeneration,
    PreTrainedTokenizerFast,
)

from mtdump.export import LMScorer, MTScorer, PairEntry

SRC_WORDS = "the cat sat on mat societies tend to change fast dogs bark".split()
TGT_WORDS = "katten sad paa maatten samfund plejer at skifte hurtigt hunde goer".split()
LANG_CODES = ["aa_XX", "bb_XX"]


def _word_tokenizer() -> PreTrainedTokenizerFast:
    vocab = {"<unk>": 0, "<s>": 1, "</s>": 2, "<pad>": 3}
    for word in SRC_WORDS + TGT_WORDS:
        vocab.setdefault(word, len(vocab))
    tok = Tokenizer(models.WordLevel(vocab, unk_token="<unk>"))
    tok.pre_tokenizer = pre_tokenizers.Whitespace()
    fast = PreTrainedTokenizerFast(
        tokenizer_object=tok,
        unk_token="<unk>",
        bos_token="<s>",
        eos_token="</s>",
        pad_token="<pad>",
    )
    fast.add_special_tokens({"additional_special_tokens": LANG_CODES})
    return fast


@pytest.fixture(scope="session")
def tokenizer():
    return _word_tokenizer()


@pytest.fixture(scope="session")
def lm(tokenizer):
    torch.manual_seed(11)
    config = GPT2Config(
        vocab_size=len(tokenizer),
        n_positions=64,
        n_embd=32,
        n_layer=2,
        n_head=2,
        bos_token_id=tokenizer.bos_token_id,
        eos_token_id=tokenizer.eos_token_id,
    )
    return LMScorer(GPT2LMHeadModel(config), tokenizer, name="toy-lm")


@pytest.fixture(scope="session")
def mt(tokenizer):
    torch.manual_seed(12)
    config = M2M100Config(
        vocab_size=len(tokenizer),
        d_model=32,
        encoder_layers=2,
        decoder_layers=2,
        encoder_attention_heads=2,
        decoder_attention_heads=2,
        encoder_ffn_dim=64,
        decoder_ffn_dim=64,
        max_position_embeddings=64,
        pad_token_id=tokenizer.pad_token_id,
        bos_token_id=tokenizer.bos_token_id,
        eos_token_id=tokenizer.eos_token_id,
        decoder_start_token_id=tokenizer.eos_token_id,
        dropout=0.0,
        attention_dropout=0.0,
    )
    return MTScorer(M2M100ForConditionalGeneration(config), tokenizer, name="toy-mt")


@pytest.fixture
def entries():
    return [
        PairEntry("pair0", "the cat sat on the mat", "katten sad paa maatten", "aa_XX", "bb_XX"),
        PairEntry("pair1", "societies tend to change fast", "samfund plejer at skifte hurtigt", "aa_XX", "bb_XX"),
        PairEntry("pair2", "dogs bark", "hunde goer", "aa_XX", "bb_XX"),
    ]
