import math

import pytest
import torch

from uwtok.distill import (
    AttnPoolHead,
    FileTeacher,
    LinearPoolHead,
    SyntheticTeacher,
    class_prototypes,
    cosine_distill_loss,
    pre_post_distill_loss,
    read_embedding_store,
    write_embedding_store,
    zero_shot_proxy,
)
from uwtok.errors import DataError, FormatError, ValidationError


def test_synthetic_teacher_deterministic():
    torch.manual_seed(11)
    images = torch.rand(3, 16, 16, 3) * 2 - 1
    a = SyntheticTeacher(dim=32, seed=5).embed(images)
    b = SyntheticTeacher(dim=32, seed=5).embed(images)
    assert torch.equal(a, b)
    c = SyntheticTeacher(dim=32, seed=6).embed(images)
    assert not torch.allclose(a, c)


def test_synthetic_teacher_output_normalized():
    images = torch.rand(4, 16, 16, 3)
    vecs = SyntheticTeacher(dim=16, seed=1).embed(images)
    assert torch.allclose(vecs.norm(dim=-1), torch.ones(4), atol=1e-4)


def test_embedding_store_round_trip(tmp_path):
    torch.manual_seed(0)
    vectors = {f"sample-{i}": torch.randn(8) for i in range(5)}
    path = tmp_path / "store.uweb"
    write_embedding_store(path, vectors, dim=8)
    loaded = read_embedding_store(path)
    assert set(loaded) == set(vectors)
    for key, vec in vectors.items():
        expected = vec / vec.norm()
        assert torch.equal(loaded[key], expected.to(torch.float32))


def test_file_teacher_missing_key_lists_it(tmp_path):
    path = tmp_path / "store.uweb"
    write_embedding_store(path, {"a": torch.ones(4)}, dim=4)
    teacher = FileTeacher(path)
    with pytest.raises(DataError, match="'missing-key'"):
        teacher.embed(None, sample_ids=["missing-key"])


def test_store_rejects_bad_magic(tmp_path):
    path = tmp_path / "junk.uweb"
    path.write_bytes(b"NOPE" + b"\x00" * 32)
    with pytest.raises(FormatError, match="magic"):
        read_embedding_store(path)


def test_store_rejects_zero_norm():
    with pytest.raises(ValidationError, match="zero norm"):
        write_embedding_store("/tmp/never-written.uweb", {"a": torch.zeros(4)}, dim=4)


def test_attn_pool_constant_grid_independent_of_size():
    torch.manual_seed(1)
    head = AttnPoolHead(latent_dim=6, teacher_dim=10)
    value = torch.randn(6)
    small = value.expand(1, 4, 4, 6).contiguous()
    large = value.expand(1, 7, 9, 6).contiguous()
    assert torch.allclose(head(small), head(large), atol=1e-5)


def test_pool_heads_shape_contract():
    torch.manual_seed(2)
    for head in (AttnPoolHead(12, 16), LinearPoolHead(12, 16)):
        for h, w in ((8, 8), (12, 12), (3, 5)):
            out = head(torch.randn(2, h, w, 12))
            assert out.shape == (2, 16)


def test_pool_head_empty_grid_is_internal_error():
    head = AttnPoolHead(4, 8)
    with pytest.raises(RuntimeError, match="empty"):
        head(torch.zeros(1, 0, 4))


def test_attn_pool_gradient_matches_finite_differences():
    torch.manual_seed(3)
    head = AttnPoolHead(latent_dim=4, teacher_dim=6, width=8, heads=2).double()
    tokens = torch.randn(1, 5, 4, dtype=torch.float64, requires_grad=True)
    target = torch.randn(1, 6, dtype=torch.float64)
    loss = cosine_distill_loss(head(tokens), target)
    loss.backward()
    h = 1e-6
    for idx in [0, 7, 13, 19]:
        flat = tokens.detach().clone().flatten()
        flat[idx] += h
        up = cosine_distill_loss(head(flat.reshape(1, 5, 4)), target).item()
        flat[idx] -= 2 * h
        down = cosine_distill_loss(head(flat.reshape(1, 5, 4)), target).item()
        fd = (up - down) / (2 * h)
        auto = tokens.grad.flatten()[idx].item()
        assert auto == pytest.approx(fd, rel=1e-4, abs=1e-10)


def test_cosine_loss_reference_points():
    v = torch.tensor([[1.0, 0.0, 0.0]])
    assert cosine_distill_loss(v, v).item() == pytest.approx(0.0, abs=1e-6)
    assert cosine_distill_loss(v, -v).item() == pytest.approx(2.0, abs=1e-6)
    w = torch.tensor([[0.0, 1.0, 0.0]])
    assert cosine_distill_loss(v, w).item() == pytest.approx(1.0, abs=1e-6)


def test_cosine_loss_scale_invariant():
    torch.manual_seed(4)
    a, b = torch.randn(3, 5), torch.randn(3, 5)
    base = cosine_distill_loss(a, b).item()
    assert cosine_distill_loss(7.3 * a, b).item() == pytest.approx(base, abs=1e-5)
    assert cosine_distill_loss(a, 0.02 * b).item() == pytest.approx(base, abs=1e-4)


def test_pre_post_arms_toggle():
    torch.manual_seed(5)
    pre, post, target = torch.randn(2, 4), torch.randn(2, 4), torch.randn(2, 4)
    total, p, q = pre_post_distill_loss(pre, post, target, eta=0.5)
    assert total.item() == pytest.approx(p.item() + 0.5 * q.item(), abs=1e-6)
    total_pre, _, q0 = pre_post_distill_loss(pre, post, target, post_enabled=False)
    assert q0.item() == 0.0
    assert total_pre.item() == pytest.approx(p.item(), abs=1e-6)
    total_post, p0, _ = pre_post_distill_loss(pre, post, target, pre_enabled=False)
    assert p0.item() == 0.0
    assert total_post.item() == pytest.approx(q.item(), abs=1e-6)


def test_zero_norm_guard():
    pooled = torch.zeros(1, 4)
    target = torch.ones(1, 4)
    loss = cosine_distill_loss(pooled, target)
    assert torch.isfinite(loss)


def test_prototypes_self_classification_is_perfect():
    torch.manual_seed(6)
    emb = torch.randn(12, 16)
    labels = [i % 4 for i in range(12)]
    protos, classes = class_prototypes(emb, labels)
    proto_result = zero_shot_proxy(protos, classes, protos, classes, topk=(1,))
    assert proto_result["top1"] == 1.0


def test_prototypes_require_two_classes():
    with pytest.raises(ValidationError, match="2 classes"):
        class_prototypes(torch.randn(3, 4), [0, 0, 0])


def test_random_embeddings_score_near_chance():
    # Monte-Carlo oracle: random student vectors vs C balanced classes
    torch.manual_seed(7)
    n, c, dim = 4000, 8, 32
    protos, classes = class_prototypes(torch.randn(64, dim), [i % c for i in range(64)])
    student = torch.randn(n, dim)
    labels = [i % c for i in range(n)]
    acc = zero_shot_proxy(student, labels, protos, classes, topk=(1,))["top1"]
    p = 1 / c
    sigma = math.sqrt(p * (1 - p) / n)
    assert abs(acc - p) <= 3 * sigma


def test_teacher_separates_texture_classes():
    # intra-class cosine should exceed inter-class cosine on the synthetic set
    from uwtok.data import DatasetSpec, make_dataset
    from uwtok.rng import np_generator

    teacher = SyntheticTeacher(dim=32, seed=3)
    stream = make_dataset(DatasetSpec(kind="synthetic-texture", seed=9, classes=4))
    rng = np_generator("teacher-sep")
    images, labels = [], []
    for _ in range(48):
        sample = stream.draw(rng, size=32)
        images.append(torch.from_numpy(sample.image))
        labels.append(sample.label)
    vecs = teacher.embed(torch.stack(images))
    sims = vecs @ vecs.t()
    same = torch.tensor([[a == b for b in labels] for a in labels])
    off_diag = ~torch.eye(len(labels), dtype=torch.bool)
    intra = sims[same & off_diag].mean().item()
    inter = sims[~same].mean().item()
    assert intra > inter
