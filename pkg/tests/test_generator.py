import numpy as np
import pytest
import torch

from hsigen import body, generator as gen, graphs, pla, synth
from hsigen.scene import LabeledPointCloud


@pytest.fixture(scope="module")
def template():
    return synth.make_templates()[7]        # bare room: one chair, one table


@pytest.fixture(scope="module")
def model():
    torch.manual_seed(0)
    return gen.InteractionVAE()


@pytest.fixture(scope="module")
def cond(template, model):
    from hsigen import textparse
    parsed = textparse.parse_description("a person sits on the chair near the table")[0]
    return gen.prepare_condition(template.scene, parsed, template.gsg,
                                 graphs.default_lexicon())


# ---------------------------------------------------------------------------
# scene encoder

def test_encode_scene_dimension(model, cond):
    f = gen.encode_scene(cond.cloud, model)
    assert f.shape == (256,)


def test_encode_scene_permutation_invariant(model, cond):
    f1 = gen.encode_scene(cond.cloud, model)
    perm = np.random.default_rng(0).permutation(len(cond.cloud.points))
    shuffled = LabeledPointCloud(points=cond.cloud.points[perm],
                                 semantics=cond.cloud.semantics[perm],
                                 source_object=cond.cloud.source_object[perm])
    f2 = gen.encode_scene(shuffled, model)
    assert float((f1 - f2).detach().abs().max()) <= 1e-6


def test_encode_scene_min_points(model):
    tiny = LabeledPointCloud(points=np.zeros((10, 3)), semantics=np.zeros(10, dtype=int),
                             source_object=np.array(["a"] * 10, dtype=object))
    with pytest.raises(gen.GeneratorError):
        gen.encode_scene(tiny, model)


# ---------------------------------------------------------------------------
# condition assembly

def test_build_condition_concatenates():
    f_s = torch.zeros(256, dtype=torch.float64)
    f_sg = torch.ones(128, dtype=torch.float64)
    f_a = torch.full((64,), 2.0, dtype=torch.float64)
    f = gen.build_condition(f_s, f_sg, f_a)
    assert f.shape == (448,)
    assert torch.equal(f[:256], f_s)
    assert torch.equal(f[256:384], f_sg)
    assert torch.equal(f[384:], f_a)


def test_build_condition_zero():
    f = gen.build_condition(torch.zeros(256), torch.zeros(128), torch.zeros(64))
    assert torch.equal(f, torch.zeros(448))


def test_build_condition_rejects_mismatch():
    with pytest.raises(gen.GeneratorError):
        gen.build_condition(torch.zeros(128), torch.zeros(256), torch.zeros(64))


# ---------------------------------------------------------------------------
# posterior / reparameterization / decoder

def test_posterior_shapes_and_determinism(model, cond):
    f_ce = gen.condition_features(model, cond)
    mesh = body.body_mesh(body.BodyParams.rest())
    p1 = model.encode_posterior(mesh, f_ce, origin=cond.origin)
    p2 = model.encode_posterior(mesh, f_ce, origin=cond.origin)
    assert p1.mu.shape == (32,) and p1.logvar.shape == (32,)
    assert torch.equal(p1.mu, p2.mu) and torch.equal(p1.logvar, p2.logvar)


def test_posterior_sensitive_to_mesh(model, cond):
    f_ce = gen.condition_features(model, cond)
    m1 = body.body_mesh(body.BodyParams.rest())
    params2 = body.BodyParams.rest()
    params2.t = torch.tensor([0.5, 0.0, 0.0], dtype=torch.float64)
    m2 = body.body_mesh(params2)
    p1 = model.encode_posterior(m1, f_ce)
    p2 = model.encode_posterior(m2, f_ce)
    assert not torch.allclose(p1.mu, p2.mu)


def test_reparameterize_zero_noise_is_mu():
    post = gen.PosteriorParams(mu=torch.arange(8.0), logvar=torch.randn(8))
    z = gen.reparameterize(post, torch.zeros(8))
    assert torch.equal(z, post.mu)


def test_reparameterize_unit_variance():
    eps = torch.randn(8, dtype=torch.float64)
    post = gen.PosteriorParams(mu=torch.ones(8, dtype=torch.float64),
                               logvar=torch.zeros(8, dtype=torch.float64))
    z = gen.reparameterize(post, eps)
    assert torch.allclose(z, post.mu + eps)


def test_reparameterize_gradient_identity():
    mu = torch.zeros(6, dtype=torch.float64, requires_grad=True)
    post = gen.PosteriorParams(mu=mu, logvar=torch.zeros(6, dtype=torch.float64))
    noise = torch.randn(6, dtype=torch.float64)
    jac = torch.autograd.functional.jacobian(
        lambda m: gen.reparameterize(gen.PosteriorParams(m, post.logvar), noise), mu)
    np.testing.assert_allclose(jac.numpy(), np.eye(6), atol=1e-12)
    # finite differences agree
    h = 1e-6
    for i in range(3):
        d = torch.zeros(6, dtype=torch.float64)
        d[i] = h
        z_plus = gen.reparameterize(gen.PosteriorParams(mu.detach() + d, post.logvar), noise)
        z_minus = gen.reparameterize(gen.PosteriorParams(mu.detach() - d, post.logvar), noise)
        fd = (z_plus - z_minus) / (2 * h)
        np.testing.assert_allclose(fd.numpy(), np.eye(6)[i], atol=1e-8)


def test_decode_shapes_and_determinism(model, cond):
    f_ce = gen.condition_features(model, cond)
    z = torch.zeros(32, dtype=torch.float64)
    beta = torch.ones(10, dtype=torch.float64)
    p1 = model.decode(z, f_ce, beta, cond.tokens, origin=cond.origin)
    p2 = model.decode(z, f_ce, beta, cond.tokens, origin=cond.origin)
    assert tuple(p1.t.shape) == (3,) and tuple(p1.r.shape) == (6,)
    assert tuple(p1.beta.shape) == (10,) and tuple(p1.p.shape) == (63,)
    assert tuple(p1.h.shape) == (4,)
    for k in ("t", "r", "beta", "p", "h"):
        assert torch.equal(getattr(p1, k), getattr(p2, k))


def test_decode_beta_changes_output(model, cond):
    f_ce = gen.condition_features(model, cond)
    z = torch.zeros(32, dtype=torch.float64)
    p1 = model.decode(z, f_ce, torch.ones(10, dtype=torch.float64), cond.tokens)
    p2 = model.decode(z, f_ce, torch.full((10,), 1.3, dtype=torch.float64), cond.tokens)
    assert float(torch.linalg.norm(p1.t.detach() - p2.t.detach())) > 0


# ---------------------------------------------------------------------------
# training

def small_dataset(template, n=3):
    ds = synth.synth_dataset(synth.SynthConfig(n_samples=n), seed=21,
                             templates=[template])
    return ds.triples()


def test_train_rejects_empty():
    with pytest.raises(gen.GeneratorError):
        gen.train([], gen.TrainConfig(epochs=1))


def test_train_kl_nonnegative_and_deterministic(template):
    data = small_dataset(template)
    cfg = gen.TrainConfig(epochs=2, batch_size=2, seed=3)
    _, log1 = gen.train(data, cfg)
    _, log2 = gen.train(data, cfg)
    assert all(row["kl"] >= 0 for row in log1)
    first_epoch1 = [row["loss"] for row in log1 if row["epoch"] == 0]
    first_epoch2 = [row["loss"] for row in log2 if row["epoch"] == 0]
    assert first_epoch1 == first_epoch2


def test_single_sample_recon_decreases(template):
    data = small_dataset(template, n=1)
    cfg = gen.TrainConfig(epochs=60, batch_size=1, seed=4, kl_weight=0.01)
    _, log = gen.train(data, cfg)
    early = np.mean([r["recon_vert"] for r in log[:5]])
    late = np.mean([r["recon_vert"] for r in log[-5:]])
    assert late < early


# ---------------------------------------------------------------------------
# sampling / checkpoints

def test_sample_zero(template, model):
    out = gen.sample(template.scene, "a person sits on the chair", 0, 1, model)
    assert out == []


def test_sample_reproducible(template, model):
    a = gen.sample(template.scene, "a person sits on the chair", 3, 9, model)
    b = gen.sample(template.scene, "a person sits on the chair", 3, 9, model)
    for (pa, _), (pb, _) in zip(a, b):
        assert torch.equal(pa.t, pb.t) and torch.equal(pa.p, pb.p)


def test_sample_diverse(template, model):
    out = gen.sample(template.scene, "a person sits on the chair", 8, 2, model)
    poses = np.stack([p.p.numpy() for p, _ in out])
    dists = [np.linalg.norm(poses[i] - poses[j])
             for i in range(8) for j in range(i + 1, 8)]
    assert min(dists) > 0


def test_sample_multi_person_rejected(template, model):
    with pytest.raises(gen.GeneratorError):
        gen.sample(template.scene,
                   "a person sits on the chair while a man stands by the table",
                   1, 0, model)


def test_checkpoint_roundtrip(tmp_path, template, model, cond):
    path = tmp_path / "ckpt.pt"
    gen.save_checkpoint(model, path, meta={"note": "test"})
    loaded, meta = gen.load_checkpoint(path)
    assert meta["note"] == "test"
    f_ce = gen.condition_features(model, cond)
    f_ce2 = gen.condition_features(loaded, cond)
    assert torch.equal(f_ce, f_ce2)
    z = torch.zeros(32, dtype=torch.float64)
    beta = torch.ones(10, dtype=torch.float64)
    p1 = model.decode(z, f_ce, beta, cond.tokens)
    p2 = loaded.decode(z, f_ce2, beta, cond.tokens)
    assert torch.equal(p1.p, p2.p)
