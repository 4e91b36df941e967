import pytest
import torch

from posetransfer.discriminator import (
    LocalDiscriminator,
    RegionDiscriminators,
    bce,
    build_local_discriminator,
    d_loss,
    d_score,
    g_adv_loss,
)
from posetransfer.errors import ShapeError

from oracles import dense_spectral_norm


def power_iteration_estimate(conv) -> float:
    w = conv.parametrizations.weight.original.detach().flatten(1)
    sn = conv.parametrizations.weight[0]
    return torch.dot(sn._u, w @ sn._v).item()


def test_ladder_for_128_crops():
    D = build_local_discriminator(128)
    assert D.ladder() == [(64, 64), (128, 32), (256, 16), (512, 8), (1024, 4), (2048, 2), (1, 2)]


def test_output_is_probability_per_pair():
    D = LocalDiscriminator(16)
    p = d_score(D, torch.rand(5, 3, 16, 16), torch.rand(5, 3, 16, 16))
    assert p.shape == (5,)
    assert torch.all((p > 0) & (p < 1))


def test_crop_side_allowlist_and_validation():
    with pytest.raises(ValueError):
        build_local_discriminator(64)
    assert build_local_discriminator(64, allowed_sides=(64, 128)).crop_side == 64
    with pytest.raises(ValueError):
        LocalDiscriminator(24)
    with pytest.raises(ShapeError):
        LocalDiscriminator(16)(torch.zeros(1, 6, 32, 32))


def test_every_conv_is_spectrally_normalized():
    D = LocalDiscriminator(16)
    assert all(hasattr(c, "parametrizations") for c in D.convs)


def test_spectral_norm_estimate_matches_dense_svd():
    torch.manual_seed(0)
    D = LocalDiscriminator(16)
    D.train()
    for _ in range(20):
        D(torch.rand(2, 6, 16, 16))  # one power iteration per training forward
    for conv in D.convs:
        dense = dense_spectral_norm(conv.parametrizations.weight.original)
        assert abs(power_iteration_estimate(conv) - dense) <= 0.05 * dense


def test_bce_matches_definition():
    p = torch.tensor([0.2, 0.9])
    expected = -(torch.log(p)).mean()
    torch.testing.assert_close(bce(p, 1.0), expected)
    torch.testing.assert_close(bce(p, 0.0), -(torch.log(1 - p)).mean())


def test_region_groups_route_to_members():
    R = RegionDiscriminators(16, seed=0, groups=2, allowed_sides=(16,)).eval()  # freeze power iteration
    ref, cand = torch.rand(4, 3, 16, 16), torch.rand(4, 3, 16, 16)
    region = torch.tensor([0, 1, 2, 3])
    got = R.score(ref, cand, region)
    torch.testing.assert_close(got[0::2], d_score(R.members[0], ref[0::2], cand[0::2]))
    torch.testing.assert_close(got[1::2], d_score(R.members[1], ref[1::2], cand[1::2]))


def test_separable_toy_task_is_learned():
    """Real pairs repeat the reference crop; fake pairs take another sample's crop."""
    torch.manual_seed(0)
    D = LocalDiscriminator(16, seed=0)
    opt = torch.optim.Adam(D.parameters(), lr=2e-4, betas=(0.5, 0.999))
    g = torch.Generator().manual_seed(1)

    def batch(n=8):
        ref = torch.rand(n, 3, 16, 16, generator=g) * 2 - 1
        return ref, ref.clone(), ref.roll(1, 0)

    for _ in range(200):
        ref, real, fake = batch()
        loss = d_loss(D, (ref, real), (ref, fake))
        opt.zero_grad()
        loss.backward()
        opt.step()
    D.eval()
    ref, real, fake = batch(64)
    with torch.no_grad():
        assert d_score(D, ref, real).mean() > d_score(D, ref, fake).mean()
        assert g_adv_loss(D, (ref, fake)) > g_adv_loss(D, (ref, real))


def test_chance_output_gives_log2_loss():
    p = torch.full((4,), 0.5)
    assert (bce(p, 1.0) + bce(p, 0.0)).item() / 2 == pytest.approx(0.6931, abs=1e-4)


def test_generator_gradient_flows_and_loss_falls_with_score():
    D = LocalDiscriminator(16, seed=0).eval()
    ref = torch.rand(2, 3, 16, 16)
    fake = torch.rand(2, 3, 16, 16, requires_grad=True)
    g_adv_loss(D, (ref, fake)).backward()
    assert fake.grad is not None and fake.grad.abs().sum() > 0
    assert bce(torch.tensor([0.7]), 1.0) < bce(torch.tensor([0.3]), 1.0)


def test_same_seed_same_discriminator():
    a, b = LocalDiscriminator(16, seed=4), LocalDiscriminator(16, seed=4)
    assert all(torch.equal(x, y) for x, y in zip(a.state_dict().values(), b.state_dict().values()))
