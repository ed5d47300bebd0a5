import pytest
import torch

from app.core.models import SubjectAttributes
from data import PhantomSpec, generate_phantom
from knowledge import EmbeddingStore, stub_encoder


@pytest.fixture(autouse=True)
def deterministic_torch():
    torch.manual_seed(0)
    yield


@pytest.fixture
def tiny_spec():
    return PhantomSpec(size=16, noise_sigma=0.05, seed=3)


@pytest.fixture
def attrs():
    return SubjectAttributes(age_years=57, sex="male", diagnosis="mild cognitive impairment")


@pytest.fixture
def tiny_sample(tiny_spec, attrs):
    return generate_phantom(tiny_spec, attrs, subject_id="sub-0000")


@pytest.fixture
def small_encoder():
    return stub_encoder(seed=0, hidden_dim=64)


@pytest.fixture
def store(tmp_path):
    return EmbeddingStore(tmp_path / "embeddings")
