import pytest
import torch
from transformers import GPT2Config, GPT2LMHeadModel


@pytest.fixture(scope="session")
def prompt_ids():
    """The 16-token prompt used across the suite."""
    return tuple(range(2, 18))


@pytest.fixture(scope="session")
def tiny_model_dir(tmp_path_factory):
    """A 2-layer, 2-head GPT-2 with random weights, saved locally."""
    torch.manual_seed(1234)
    config = GPT2Config(
        n_layer=2,
        n_head=2,
        n_embd=32,
        vocab_size=128,
        n_positions=64,
        bos_token_id=0,
        eos_token_id=0,
    )
    model = GPT2LMHeadModel(config)
    path = tmp_path_factory.mktemp("model") / "tiny-gpt2"
    model.save_pretrained(path)
    return str(path)
