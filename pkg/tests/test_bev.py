import numpy as np
from hypothesis import given
from hypothesis import strategies as st

from disc import oracles
from disc.acceptance import random_contained_rig, random_da_case
from disc.bev import (
    DeformableAttnWeights,
    FeaturePyramid,
    ProposalSet,
    VoxelFeatureGrid,
    deformable_attention,
    deformable_attention_many,
    depth_guided_proposals,
    lift_splat,
    pool_to_bev,
    refine_proposals,
)
from disc.geometry import CameraRig, DepthBinning, SceneVolumeSpec, world_to_voxel
from disc.numerics import LinearLayer, bilinear_sample, identity_conv2d

SPEC = SceneVolumeSpec((0.0, 0.0, 0.0), (9.6, 9.6, 9.6), 0.2, (48, 48, 48))
BINS = DepthBinning(0.5, 4.0, 8)


def _nets(rng, c, levels, k, scale=1.0):
    return DeformableAttnWeights(
        LinearLayer(rng.normal(0, scale, (levels * k * 2, c)), rng.normal(0, scale, levels * k * 2)),
        LinearLayer(rng.normal(size=(levels * k, c)), rng.normal(size=levels * k)),
        LinearLayer(rng.normal(size=(c, c)), rng.normal(size=c)),
        k,
    )


@given(st.integers(0, 10_000))
def test_lift_splat_conserves_mass(seed):
    rng = np.random.default_rng(seed)
    rig = random_contained_rig(rng, SPEC, BINS, 4)
    feats = rng.normal(size=(2, 6, 8))
    grid = lift_splat(feats, rng.normal(size=(8, 6, 8)), rig, BINS, SPEC, 4)
    np.testing.assert_allclose(grid.features.sum(axis=(1, 2, 3)), feats.sum(axis=(1, 2)), atol=1e-4)


def test_lift_splat_zero_and_one_hot(rng):
    rig = random_contained_rig(rng, SPEC, BINS, 4)
    assert not lift_splat(np.zeros((2, 6, 8)), rng.normal(size=(8, 6, 8)), rig, BINS, SPEC, 4).features.any()
    rig = CameraRig.looking_along((4.8, 4.8, 4.8), 0.3, 0.1, 20, 20, 1.5, 1.5, 4, 4)
    logits = np.full((8, 1, 1), -1e4)
    logits[5] = 0.0
    grid = lift_splat(np.array([[[2.0]]]), logits, rig, BINS, SPEC, 4)
    idx = world_to_voxel(SPEC, rig.unproject_many(np.array([[2.0, 2.0]]), BINS.centers()[[5]])[0])
    assert grid.features[(0,) + idx] == 2.0
    assert np.count_nonzero(grid.features) == 1


def test_proposals_wall_slab():
    spec = SceneVolumeSpec.desk_scale()
    rig = CameraRig.looking_along((0.1, 3.2, 0.8), 0.0, 0.0, 40, 40, 31.5, 23.5, 64, 48)
    # a wall facing the camera at distance 3.05 m has camera z-depth 3.05 everywhere
    props = depth_guided_proposals(np.full((48, 64), 3.05), rig, spec, 4)
    assert len(props) > 0
    assert np.all(props.indices[:, 0] == int((0.1 + 3.05) / 0.2))
    assert len(np.unique(props.indices, axis=0)) == len(props)


def test_proposals_empty_and_dedup():
    spec = SceneVolumeSpec.desk_scale()
    rig = CameraRig.looking_along((0.1, 3.2, 0.8), 0.0, 0.0, 4, 4, 31.5, 23.5, 64, 48)
    assert len(depth_guided_proposals(np.zeros((48, 64)), rig, spec, 4)) == 0
    # a very short focal length packs neighbouring pixels into the same voxel
    props = depth_guided_proposals(np.full((48, 64), 1.0), rig, spec, 4)
    assert len(props) < 12 * 16


def test_deformable_attention_oracle_and_constant(rng):
    for _ in range(30):
        q, levels, refs, nets = random_da_case(rng)
        got = deformable_attention(q, FeaturePyramid(levels, [1] * len(levels)), refs, nets)
        want = oracles.deformable_attention(q, levels, refs, nets.offset_net.weight, nets.offset_net.bias,
                                            nets.weight_net.weight, nets.weight_net.bias,
                                            nets.value_net.weight, nets.value_net.bias, nets.points)
        np.testing.assert_allclose(got, want, atol=1e-5)
    c = rng.normal(size=3)
    const = FeaturePyramid([np.broadcast_to(c[:, None, None], (3, 9, 9)).copy()], [1])
    nets = _nets(rng, 3, 1, 4, scale=0.1)
    out = deformable_attention_many(rng.normal(size=(4, 3)), const, np.full((4, 1, 2), 4.0), nets)
    np.testing.assert_allclose(out, np.tile(nets.value_net(c), (4, 1)), atol=1e-6)


def test_deformable_attention_single_point(rng):
    fm = rng.normal(size=(3, 5, 5))
    nets = _nets(rng, 3, 1, 1)
    nets.offset_net = LinearLayer(np.zeros((2, 3)), np.zeros(2))
    got = deformable_attention(rng.normal(size=3), FeaturePyramid([fm], [1]), [[1.7, 2.2]], nets)
    np.testing.assert_allclose(got, nets.value_net(bilinear_sample(fm, (1.7, 2.2))), atol=1e-12)


def test_deformable_attention_permutation_invariant(rng):
    k = 4
    fm = rng.normal(size=(3, 6, 6))
    nets = _nets(rng, 3, 1, k)
    perm = rng.permutation(k)
    off_perm = np.concatenate([[2 * p, 2 * p + 1] for p in perm])
    permuted = DeformableAttnWeights(
        LinearLayer(nets.offset_net.weight[off_perm], nets.offset_net.bias[off_perm]),
        LinearLayer(nets.weight_net.weight[perm], nets.weight_net.bias[perm]), nets.value_net, k)
    q, pyr = rng.normal(size=3), FeaturePyramid([fm], [1])
    np.testing.assert_allclose(deformable_attention(q, pyr, [[2.5, 2.5]], nets),
                               deformable_attention(q, pyr, [[2.5, 2.5]], permuted), atol=1e-12)


def _refine_setup(rng):
    spec = SceneVolumeSpec.desk_scale()
    rig = CameraRig.looking_along((0.1, 3.2, 0.8), 0.0, -0.1, 40, 40, 31.5, 23.5, 64, 48)
    coarse = VoxelFeatureGrid(rng.normal(size=(3, 32, 32, 8)), spec)
    pyr = FeaturePyramid([rng.normal(size=(3, 12, 16)), rng.normal(size=(3, 24, 32))], [4, 2])
    return spec, rig, coarse, pyr, _nets(rng, 3, 2, 2, scale=0.3)


def test_refine_touches_only_proposals(rng):
    spec, rig, coarse, pyr, nets = _refine_setup(rng)
    assert np.array_equal(refine_proposals(coarse, ProposalSet(np.zeros((0, 3), int), np.zeros((0, 2))),
                                           pyr, rig, nets).features, coarse.features)
    props = depth_guided_proposals(np.full((48, 64), 2.0), rig, spec, 4)
    fine = refine_proposals(coarse, props, pyr, rig, nets).features
    touched = np.zeros(spec.dims, bool)
    touched[tuple(props.indices.T)] = True
    assert np.array_equal(fine[:, ~touched], coarse.features[:, ~touched])


def test_refine_single_proposal_oracle(rng):
    spec, rig, coarse, pyr, nets = _refine_setup(rng)
    idx = np.array([[12, 16, 3]])
    fine = refine_proposals(coarse, ProposalSet(idx, np.zeros((1, 2))), pyr, rig, nets).features
    uv, _, _ = rig.project_many(spec.voxel_centers(idx))
    refs = [tuple((uv[0] - s // 2) / s) for s in (4, 2)]
    want = oracles.deformable_attention(coarse.features[:, 12, 16, 3], pyr.levels, refs,
                                        nets.offset_net.weight, nets.offset_net.bias, nets.weight_net.weight,
                                        nets.weight_net.bias, nets.value_net.weight, nets.value_net.bias, 2)
    np.testing.assert_allclose(fine[:, 12, 16, 3], want, atol=1e-9)


def test_pool_commutes_with_increasing_map(rng):
    v = VoxelFeatureGrid(rng.normal(size=(2, 32, 32, 8)), SceneVolumeSpec.desk_scale())
    w = VoxelFeatureGrid(2 * v.features + 1, v.spec)
    np.testing.assert_allclose(pool_to_bev(w), 2 * pool_to_bev(v) + 1)
    np.testing.assert_array_equal(pool_to_bev(v), oracles.max_pool(v.features, 3))


def test_split_identity_conv(rng):
    from disc.bev import ConvStack, split_bev

    bev = rng.normal(size=(3, 8, 8)).astype(np.float32)
    a, b = split_bev(bev, ConvStack([identity_conv2d(3)]), ConvStack([identity_conv2d(3)]))
    np.testing.assert_array_equal(a, bev)
    np.testing.assert_array_equal(b, bev)
