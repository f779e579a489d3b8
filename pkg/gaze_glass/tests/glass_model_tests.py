import os
import shutil
import struct
import tempfile
from unittest import TestCase

import numpy as np
import torch

from gaze_glass.exceptions import ConfigError, ContractError, FormatError, NumericError, ShapeError
from gaze_glass.glass_model import (
    CHECKPOINT_MAGIC, Checkpoint, GlassConfig, build_model, load_checkpoint, model_size_config, patchify,
    predict_previous, read_checkpoint, save_checkpoint, unpatchify, window_spec_for,
)
from gaze_glass.models import NormStats
from gaze_glass.neural_core import backward, grad_check
from gaze_glass.pretrain import LossConfig, huber_branches, joint_loss


def window(frames=150, seed=0, batch=None, dtype=torch.float32):
    generator = torch.Generator().manual_seed(seed)
    shape = (frames, 6) if batch is None else (batch, frames, 6)
    return torch.randn(*shape, generator=generator, dtype=dtype)


class PatchifyTest(TestCase):
    def test_patch_count(self):
        """
        Tests that 150 frames in patches of 15 give 10 patches of width 90.
        """
        x = window()
        patches = patchify(x, 15)
        self.assertEqual(tuple(patches.shape), (10, 90))
        self.assertTrue(torch.equal(patches[1], x[15:30].reshape(-1)))

    def test_single_patch(self):
        x = window(30)
        self.assertTrue(torch.equal(patchify(x, 30), x.reshape(1, -1)))

    def test_round_trip(self):
        for patch in (1, 2, 3, 5, 6, 10, 15, 25, 30, 50, 75, 150):
            x = window(batch=2)
            self.assertTrue(torch.equal(unpatchify(patchify(x, patch), patch), x))

    def test_numpy_round_trip(self):
        x = np.arange(60.0).reshape(10, 6)
        np.testing.assert_array_equal(unpatchify(patchify(x, 5), 5), x)

    def test_indivisible(self):
        with self.assertRaises(ShapeError):
            patchify(window(), 7)

    def test_stride_never_divisible(self):
        """
        Tests that the default stride of 151 leaves remainder 1 for every patch size dividing 150.
        """
        for patch in [p for p in range(2, 151) if 150 % p == 0]:
            self.assertEqual(151 % patch, 1)


class GlassConfigTest(TestCase):
    def test_presets(self):
        """
        Tests the named sizes and overrides.
        """
        small = model_size_config('small')
        self.assertEqual((small.model_dim, small.encoder_layers, small.decoder_layers, small.heads), (32, 2, 2, 4))
        large = model_size_config('large', input_frames=300)
        self.assertEqual((large.model_dim, large.heads, large.input_frames), (128, 8, 300))
        self.assertEqual(large.input_patches, 20)
        with self.assertRaises(ConfigError):
            model_size_config('huge')

    def test_invalid(self):
        with self.assertRaises(ConfigError):
            GlassConfig(patch_size=7)
        with self.assertRaises(ConfigError):
            GlassConfig(model_dim=24, heads=4)
        with self.assertRaises(ConfigError):
            GlassConfig(size_name='tiny')

    def test_window_spec(self):
        """
        Tests that 10 input seconds at 30 fps is 300 frames.
        """
        spec = window_spec_for(10, 2)
        self.assertEqual((spec.input_frames, spec.output_frames, spec.stride), (300, 60, 151))
        self.assertEqual(GlassConfig().window_spec().span, 300)


class EncodeTest(TestCase):
    def setUp(self):
        self.model = build_model(GlassConfig(), seed=0)

    def test_shape_and_determinism(self):
        """
        Tests that a 150x6 window encodes to 10x32 states, identically on repeat.
        """
        x = window()
        enc = self.model.encode(x)
        self.assertEqual(tuple(enc.shape), (10, 32))
        self.assertTrue(torch.equal(enc, self.model.encode(x)))
        self.assertEqual(tuple(self.model.encode(window(batch=3)).shape), (3, 10, 32))

    def test_longer_windows(self):
        self.assertEqual(tuple(self.model.encode(window(300)).shape), (20, 32))

    def test_zero_input_identical_rows(self):
        """
        Tests that zero input through a zero embedding gives identical encoder rows.
        """
        with torch.no_grad():
            self.model.patch_embed.weight.zero_()
        enc = self.model.encode(torch.zeros(150, 6))
        self.assertTrue(torch.allclose(enc, enc[0].expand_as(enc), atol=1e-6))

    def test_non_finite(self):
        x = window()
        x[3, 2] = float('nan')
        with self.assertRaises(NumericError):
            self.model.encode(x)

    def test_wrong_dims(self):
        with self.assertRaises(ShapeError):
            self.model.encode(torch.zeros(150, 4))

    def test_seeded_init(self):
        other = build_model(GlassConfig(), seed=0)
        for (name, a), (_, b) in zip(self.model.named_parameters(), other.named_parameters()):
            self.assertTrue(torch.equal(a, b), name)
        different = build_model(GlassConfig(), seed=1)
        self.assertFalse(torch.equal(self.model.head.weight, different.head.weight))


class DecodeTest(TestCase):
    def setUp(self):
        self.model = build_model(GlassConfig(), seed=3)
        self.model.eval()
        self.x = window(seed=1)
        self.y = window(seed=2)

    def test_shape(self):
        with torch.no_grad():
            out = self.model(self.x)
        self.assertEqual(tuple(out.shape), (150, 6))

    def test_no_teacher_forcing_ignores_target(self):
        """
        Tests that without teacher forcing the forecast does not depend on the target.
        """
        with torch.no_grad():
            enc = self.model.encode(self.x)
            without = self.model.decode(enc)
            with_target = self.model.decode(enc, self.y, tf_prob=0.0)
        self.assertEqual(without.numpy().tobytes(), with_target.numpy().tobytes())

    def test_full_teacher_forcing(self):
        """
        Tests that with teacher forcing every step conditions on the ground-truth previous patches.
        """
        changed_last = self.y.clone()
        changed_last[135:] += 1.0
        changed_first = self.y.clone()
        changed_first[:15] += 1.0
        with torch.no_grad():
            enc = self.model.encode(self.x)
            base = self.model.decode(enc, self.y, tf_prob=1.0)
            last = self.model.decode(enc, changed_last, tf_prob=1.0)
            first = self.model.decode(enc, changed_first, tf_prob=1.0)
        self.assertTrue(torch.equal(base, last))
        self.assertTrue(torch.equal(base[:15], first[:15]))
        self.assertFalse(torch.equal(base[15:], first[15:]))

    def test_seeded_draws(self):
        with torch.no_grad():
            enc = self.model.encode(self.x)
            a = self.model.decode(enc, self.y, tf_prob=0.5, rng_seed=9)
            b = self.model.decode(enc, self.y, tf_prob=0.5, rng_seed=9)
        self.assertTrue(torch.equal(a, b))

    def test_contract(self):
        enc = self.model.encode(self.x)
        with self.assertRaises(ContractError):
            self.model.decode(enc, tf_prob=0.5)
        with self.assertRaises(ContractError):
            self.model.decode(enc, self.y, tf_prob=1.5)

    def test_gradients_reach_every_parameter(self):
        """
        Tests that one backward pass on random data leaves no parameter with an all-zero gradient.
        """
        self.model.train()
        loss = joint_loss(self.model(self.x, self.y, tf_prob=0.5), self.y, LossConfig())
        backward(loss, self.model)
        for name, p in self.model.named_parameters():
            self.assertIsNotNone(p.grad, name)
            self.assertTrue(bool(p.grad.abs().sum() > 0), name)

    def test_joint_loss_grad_check(self):
        """
        Tests every parameter of the small model against central differences on one window in float64, with
        Huber-kink coordinates excluded.
        """
        model = build_model(GlassConfig(), seed=5, dtype=torch.float64)
        x, y = window(seed=6, dtype=torch.float64), window(seed=7, dtype=torch.float64)
        cfg = LossConfig()

        def f():
            pred = model(x, y, tf_prob=0.5, rng_seed=11)
            return joint_loss(pred, y, cfg), huber_branches(pred, y, cfg)

        report = grad_check(f, model, step=1e-4, tol=1e-4, coords_per_parameter=2)
        self.assertTrue(report.passed, report.worst)
        self.assertEqual(set(report.errors) | set(name for name, _ in report.excluded),
                         set(name for name, _ in model.named_parameters()))


class PredictPreviousTest(TestCase):
    def test_constant(self):
        out = predict_previous(np.full((150, 6), 0.4), 150)
        np.testing.assert_array_equal(out, np.full((150, 6), 0.4))

    def test_last_frame(self):
        x = np.zeros((20, 6))
        x[-1] = [1, 2, 3, 4, 5, 6]
        out = predict_previous(x, 150)
        self.assertEqual(out.shape, (150, 6))
        np.testing.assert_array_equal(out, np.tile([1, 2, 3, 4, 5, 6], (150, 1)))

    def test_torch_batch(self):
        x = window(batch=2)
        out = predict_previous(x, 30)
        self.assertEqual(tuple(out.shape), (2, 30, 6))
        self.assertTrue(torch.equal(out[1, 29], x[1, -1]))


class CheckpointTest(TestCase):
    def setUp(self):
        self.out_dir = tempfile.mkdtemp()
        self.path = os.path.join(self.out_dir, 'model.glss')
        self.model = build_model(model_size_config('small', patch_size=10), seed=4)
        self.model.set_norm_stats(NormStats(mean=np.arange(6.0), std=np.full(6, 2.0), clamped=np.zeros(6, bool)))

    def tearDown(self):
        shutil.rmtree(self.out_dir, ignore_errors=True)

    def test_round_trip(self):
        """
        Tests that every tensor and the forward output survive a save and load bit-exactly.
        """
        save_checkpoint(self.model, self.path, metadata={'seed': 4})
        loaded = load_checkpoint(self.path)
        for name, value in self.model.state_dict().items():
            self.assertTrue(torch.equal(value, loaded.state_dict()[name]), name)
        self.assertEqual(loaded.config, self.model.config)
        self.assertEqual(read_checkpoint(self.path).metadata, {'seed': 4})
        self.model.eval()
        loaded.eval()
        x = window()
        with torch.no_grad():
            self.assertEqual(self.model(x).numpy().tobytes(), loaded(x).numpy().tobytes())

    def test_bytes_are_deterministic(self):
        data = Checkpoint.from_model(self.model).to_bytes()
        self.assertTrue(data.startswith(CHECKPOINT_MAGIC))
        self.assertEqual(data, Checkpoint.from_model(self.model).to_bytes())
        self.assertEqual(Checkpoint.from_bytes(data).to_bytes(), data)

    def test_bad_magic(self):
        data = bytearray(Checkpoint.from_model(self.model).to_bytes())
        data[:4] = b'XXXX'
        with self.assertRaises(FormatError) as cm:
            Checkpoint.from_bytes(bytes(data))
        self.assertEqual(cm.exception.offset, 0)

    def test_version_mismatch(self):
        """
        Tests that another format version is rejected at the version field.
        """
        data = bytearray(Checkpoint.from_model(self.model).to_bytes())
        data[4:8] = struct.pack('<I', 2)
        with self.assertRaisesRegex(FormatError, 'version 2') as cm:
            Checkpoint.from_bytes(bytes(data))
        self.assertEqual(cm.exception.offset, 4)

    def test_truncated(self):
        data = Checkpoint.from_model(self.model).to_bytes()
        with self.assertRaisesRegex(FormatError, 'truncated') as cm:
            Checkpoint.from_bytes(data[:-3])
        self.assertIsNotNone(cm.exception.offset)
        with self.assertRaises(FormatError):
            Checkpoint.from_bytes(data + b'\x00')

    def test_missing_tensor(self):
        checkpoint = Checkpoint.from_model(self.model)
        checkpoint.tensors.pop('head.bias')
        with self.assertRaisesRegex(FormatError, 'head.bias'):
            checkpoint.to_model()
