import numpy as np
import pytest
import torch

from posetrack.config import (EncoderConfig, RegressorConfig, TrainConfig,
                              TransformerConfig)
from posetrack.errors import DatasetError, DomainError
from posetrack.geometry import (CameraIntrinsics, CropSpec, MotionCode, Pose,
                                encode_translation, matrix_to_axis_angle,
                                relative_rotation)
from posetrack.models.predictors import (MultiFramePredictor,
                                         NoisyOraclePredictor, OraclePredictor,
                                         TwoFramePredictor, Window,
                                         build_predictor, images_to_tensor,
                                         load_checkpoint, load_predictor,
                                         save_checkpoint)
from posetrack.models.predictors.layers import (FrameEncoder,
                                                FrameTransformer, MotionNet,
                                                PoseRegressor)

TINY = dict(encoder=EncoderConfig(input_size=16, embed_dim=24, scale=.125),
            regressor=RegressorConfig(hidden=(16,)),
            transformer=TransformerConfig(heads=4, ff_dim=32))


def window(size, n_frames, seed=0):
    rng = np.random.default_rng(seed)
    images = rng.random((n_frames, size, size, 3))
    return Window(images, CropSpec((0, 0, 32, 32), size, size),
                  tuple(range(n_frames)))


def test_images_to_tensor():
    images = np.random.default_rng(0).random((2, 5, 16, 16, 3))
    x = images_to_tensor(images)
    assert x.shape == (2, 5, 3, 16, 16)
    assert x.dtype == torch.float32
    assert torch.allclose(x[1, 2, 0], torch.as_tensor(images[1, 2, :, :, 0],
                                                      dtype=torch.float32))


def test_FrameEncoder():
    encoder = FrameEncoder(EncoderConfig(input_size=32, embed_dim=40))
    assert encoder.embed_dim == 40
    out = encoder(torch.rand(3, 2, 3, 32, 32))
    assert out.shape == (3, 2, 40)

    with pytest.raises(DomainError):
        encoder(torch.rand(3, 2, 3, 16, 16))
    with pytest.raises(DomainError):
        encoder(torch.rand(2, 3, 32, 32))

    # the 18-layer layout: 2 blocks in each of 4 stages
    full = FrameEncoder(EncoderConfig(full=True, embed_dim=256))
    assert len(full.stages) == 8
    assert full.project.in_features == 512


def test_FrameTransformer():
    transformer = FrameTransformer(256, TransformerConfig())
    assert transformer.model_dim == 264
    transformer.eval()
    features = torch.rand(2, 5, 256)
    out = transformer(features)
    assert out.shape == (2, 5, 256)

    # attention mixes frames: changing the first frame changes the last
    changed = features.clone()
    changed[:, 0] += 1
    assert not torch.allclose(transformer(changed)[:, -1], out[:, -1])

    with pytest.raises(DomainError):
        transformer(torch.rand(2, 1, 256))
    with pytest.raises(DomainError):
        transformer(torch.rand(2, 17, 256))
    with pytest.raises(DomainError):
        transformer(torch.rand(2, 5, 128))


def test_FrameEncoder_identical_frames():
    encoder = FrameEncoder(TINY['encoder']).eval()
    image = torch.rand(1, 1, 3, 16, 16)
    out = encoder(image.repeat(2, 6, 1, 1, 1))
    for k in range(1, 6):
        assert torch.allclose(out[:, k], out[:, 0], atol=1e-6)


def test_FrameTransformer_zeroed_blocks():
    # 22 features padded to 24 for 4 heads
    transformer = FrameTransformer(22, TransformerConfig(heads=4, ff_dim=32,
                                                         layers=2))
    assert transformer.model_dim == 24
    with torch.no_grad():
        for layer in transformer.encoder.layers:
            for p in (layer.self_attn.out_proj.weight,
                      layer.self_attn.out_proj.bias,
                      layer.linear2.weight, layer.linear2.bias):
                p.zero_()
    transformer.eval()

    features = torch.rand(3, 7, 22)
    with torch.no_grad():
        out = transformer(features)
        expected = features + transformer.positions[:7]
    assert torch.allclose(out, expected, atol=1e-6)


def test_frame_order_matters():
    net = MotionNet(TINY['encoder'], TINY['regressor'],
                    TINY['transformer']).eval()
    images = torch.rand(2, 5, 3, 16, 16)
    swapped = images[:, [1, 0, 2, 3, 4]]
    with torch.no_grad():
        rotation, translation = net(images)
        rotation_s, translation_s = net(swapped)
    assert not torch.allclose(rotation, rotation_s)
    assert not torch.allclose(translation, translation_s)

    features = torch.rand(2, 5, 24)
    transformer = net.transformer
    with torch.no_grad():
        out = transformer(features)
        out_s = transformer(features[:, [1, 0, 2, 3, 4]])
    assert not torch.allclose(out_s[:, [1, 0, 2, 3, 4]], out)


@pytest.mark.parametrize('K', [2, 8, 16])
def test_window_shapes(K):
    net = MotionNet(TINY['encoder'], TINY['regressor'],
                    TINY['transformer']).eval()
    images = torch.rand(2, K, 3, 16, 16)
    with torch.no_grad():
        assert net.encoder(images).shape == (2, K, 24)
        assert net.transformer(net.encoder(images)).shape == (2, K, 24)
        rotation, translation = net(images)
    assert rotation.shape == (2, 3) and translation.shape == (2, 3)


def test_PoseRegressor_gradients():
    torch.manual_seed(0)
    regressor = PoseRegressor(6, RegressorConfig(hidden=(8, 8)))
    regressor = regressor.double().eval()
    f_prev = torch.randn(3, 6, dtype=torch.float64, requires_grad=True)
    f_cur = torch.randn(3, 6, dtype=torch.float64, requires_grad=True)
    # central differences over every (output, input) pair
    assert torch.autograd.gradcheck(regressor, (f_prev, f_cur), eps=1e-6,
                                    atol=1e-8, rtol=1e-4)


def test_PoseRegressor():
    for rep, n_values in [('axis_angle', 3), ('quaternion', 4),
                          ('euler_xyz', 3), ('sixd', 6)]:
        regressor = PoseRegressor(8, RegressorConfig(hidden=(16, 8),
                                                     rotation_rep=rep))
        rotation, translation = regressor(torch.rand(4, 8), torch.rand(4, 8))
        assert rotation.shape == (4, n_values)
        assert translation.shape == (4, 3)

    with pytest.raises(DomainError):
        regressor(torch.rand(4, 8), torch.rand(4, 9))


def test_MotionNet():
    encoder, regressor = TINY['encoder'], TINY['regressor']
    two = MotionNet(encoder, regressor)
    assert two.transformer is None
    rotation, translation = two(torch.rand(4, 2, 3, 16, 16))
    assert rotation.shape == (4, 3) and translation.shape == (4, 3)

    multi = MotionNet(encoder, regressor, TINY['transformer'])
    rotation, translation = multi(torch.rand(4, 5, 3, 16, 16))
    assert rotation.shape == (4, 3) and translation.shape == (4, 3)


def test_LearnedPredictor():
    two = TwoFramePredictor()
    assert two.window_size == 2
    assert two.config.model == 'two_frame'
    multi = MultiFramePredictor()
    assert multi.window_size == 5
    assert multi.net.transformer is not None
    assert 'window 5' in str(multi)

    with pytest.raises(DomainError):
        TwoFramePredictor(TrainConfig(model='multi_frame', window=3))

    config = TrainConfig(model='multi_frame', window=3, **TINY)
    predictor = build_predictor(config)
    assert isinstance(predictor, MultiFramePredictor)

    with pytest.warns(UserWarning):
        code = predictor.predict(window(16, 3))
    assert isinstance(code, MotionCode)
    assert code.omega.shape == (3,)

    with pytest.raises(DomainError):
        predictor.predict(window(16, 2))

    # parameters depend on the seed only
    assert build_predictor(config) == build_predictor(config)
    assert build_predictor(config, seed=1) != build_predictor(config)
    assert predictor != TwoFramePredictor()


def test_rotation_outputs():
    for rep in ('quaternion', 'euler_xyz', 'sixd'):
        config = TrainConfig(encoder=TINY['encoder'],
                             regressor=RegressorConfig(hidden=(16,),
                                                       rotation_rep=rep))
        predictor = TwoFramePredictor(config)
        predictor.steps_ = 1
        code = predictor.predict(window(16, 2))
        assert code.omega.shape == (3,)
        assert np.linalg.norm(code.omega) <= np.pi + 1e-9


def test_checkpoints(tmp_path):
    config = TrainConfig(model='multi_frame', window=4, seed=3, **TINY)
    predictor = build_predictor(config)
    predictor.steps_ = 12
    predictor.save(tmp_path / 'model.ckpt')

    loaded = load_predictor(tmp_path / 'model.ckpt')
    assert loaded == predictor
    assert loaded.steps_ == 12
    assert loaded.window_size == 4
    assert TwoFramePredictor.load(tmp_path / 'model.ckpt') == predictor

    header, state = load_checkpoint(tmp_path / 'model.ckpt')
    assert header['format'] == 'posetrack-checkpoint'
    assert header['version'] == 1
    assert header['model'] == 'multi_frame'
    assert state.keys() == predictor.net.state_dict().keys()

    # float64 and integer tensors survive too
    tensors = {'a': torch.arange(6, dtype=torch.float64).reshape(2, 3),
               'b': torch.tensor([1, -2], dtype=torch.int64)}
    save_checkpoint(tmp_path / 'raw.ckpt', tensors, {'note': 'x'})
    header, state = load_checkpoint(tmp_path / 'raw.ckpt')
    assert header['note'] == 'x'
    assert torch.equal(state['a'], tensors['a'])
    assert state['b'].dtype == torch.int64

    with pytest.raises(DomainError):
        save_checkpoint(tmp_path / 'bad.ckpt',
                        {'c': torch.zeros(2, dtype=torch.int8)}, {})
    with pytest.raises(DatasetError):
        load_checkpoint(tmp_path / 'missing.ckpt')
    (tmp_path / 'short.ckpt').write_bytes(b'\x00\x01')
    with pytest.raises(DatasetError):
        load_checkpoint(tmp_path / 'short.ckpt')
    (tmp_path / 'junk.ckpt').write_bytes(b'\x05' + b'\x00' * 7 + b'hello')
    with pytest.raises(DatasetError):
        load_checkpoint(tmp_path / 'junk.ckpt')


def test_OraclePredictor():
    K = CameraIntrinsics(100, 100, 64, 64)
    R1 = matrix_to_axis_angle(np.eye(3))
    poses = [Pose.identity([0, 0, 500]),
             Pose(np.array([[0., -1., 0.], [1., 0., 0.], [0., 0., 1.]]),
                  [10, 0, 550])]
    crop = CropSpec((0, 0, 112, 112), 224, 224)
    oracle = OraclePredictor(K, poses, input_size=224)

    code = oracle.predict(Window(np.zeros((2, 224, 224, 3)), crop, (0, 1)))
    expected = encode_translation(K, poses[0], poses[1], crop)
    np.testing.assert_allclose(code.translation, expected)
    np.testing.assert_allclose(code.omega, [0, 0, np.pi / 2])
    np.testing.assert_allclose(
        oracle.code(0, 0, crop).as_array(), np.concatenate([[0, 0, 0], R1]))

    # the last two indices matter, earlier ones are padding
    padded = OraclePredictor(K, poses, window_size=3)
    code3 = padded.predict(Window(np.zeros((3, 64, 64, 3)), crop, (0, 0, 1)))
    np.testing.assert_allclose(code3.as_array(), code.as_array())

    omega = matrix_to_axis_angle(relative_rotation(poses[1].R, poses[0].R))
    np.testing.assert_allclose(oracle.code(1, 0, crop).omega, omega)

    with pytest.raises(DomainError):
        oracle.predict(Window(np.zeros((3, 64, 64, 3)), crop, (0, 0, 1)))

    noisy = NoisyOraclePredictor(oracle, 0., np.random.default_rng(0))
    assert noisy.window_size == 2
    assert noisy.input_size == 224
    w = Window(np.zeros((2, 224, 224, 3)), crop, (0, 1))
    np.testing.assert_array_equal(noisy.predict(w).as_array(),
                                  code.as_array())
    noisy = NoisyOraclePredictor(oracle, [0, 0, 0, .1, .1, .1],
                                 np.random.default_rng(0))
    noisy_code = noisy.predict(w)
    np.testing.assert_array_equal(noisy_code.translation, code.translation)
    assert not np.allclose(noisy_code.omega, code.omega)
