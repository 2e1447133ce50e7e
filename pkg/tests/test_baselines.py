import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from PIL import Image

from windsr.baselines import (BicubicMethod, CompressedBlob, MuLawSpec, PPMMethod, PowerLawSpec,
                              baseline_pipeline, bicubic_resize, compress_field, cubic_kernel,
                              decompanded_bin_widths, decompress_field, dequantize, mu_law_decode,
                              mu_law_encode, power_law_transform, ppm_compress, ppm_decompress, quantize)
from windsr.baselines.blob import HEADER_SIZE
from windsr.errors import ConfigError, DecodeError, DomainError


# --- mu-law --------------------------------------------------------------------

def test_mu_law_fixed_points():
    assert mu_law_encode(0.0) == 0.0
    assert mu_law_encode(1.0, 255) == pytest.approx(1.0, abs=1e-15)
    assert mu_law_encode(-1.0, 255) == pytest.approx(-1.0, abs=1e-15)


def test_mu_law_half():
    # ln(1 + 255 * 0.5) / ln(256)
    assert mu_law_encode(0.5, 255) == pytest.approx(0.8757030686492349, abs=1e-12)


def test_mu_law_rejects_out_of_range():
    with pytest.raises(DomainError):
        mu_law_encode(1.01)
    mu_law_encode(1.0 + 1e-12)


@given(st.lists(st.floats(-1, 1), min_size=1, max_size=200), st.sampled_from([1.0, 15.0, 255.0, 1000.0]))
def test_mu_law_roundtrip(xs, mu):
    x = np.array(xs)
    assert np.max(np.abs(mu_law_decode(mu_law_encode(x, mu), mu) - x)) < 1e-9


def test_mulaw_spec_validation():
    with pytest.raises(ConfigError):
        MuLawSpec(mu=0)
    with pytest.raises(ConfigError):
        MuLawSpec(Q=1)


# --- quantization --------------------------------------------------------------

def test_quantize_endpoints():
    assert quantize(-1.0, 8) == 0
    assert quantize(1.0 - 1e-12, 8) == 7
    assert quantize(1.0, 8) == 7


def test_quantize_roundtrip_bound():
    rng = np.random.default_rng(0)
    y = rng.uniform(-1, 1, 10**6)
    err = np.abs(dequantize(quantize(y, 16), 16) - y)
    assert err.max() <= 0.0625 + 1e-12


@pytest.mark.parametrize("Q", [8, 16])
def test_companded_quantization_error_within_bin(Q):
    rng = np.random.default_rng(Q)
    x = rng.uniform(-1, 1, 50_000)
    rec = mu_law_decode(dequantize(quantize(mu_law_encode(x), Q), Q))
    assert np.max(np.abs(rec - x)) <= decompanded_bin_widths(Q).max() + 1e-12


@pytest.mark.parametrize("Q", [8, 16])
def test_companding_beats_uniform_on_small_values(Q):
    rng = np.random.default_rng(1)
    # wind-like values concentrated near zero after symmetric ranging
    x = np.clip(rng.laplace(0, 0.08, 100_000), -1, 1)
    plain = dequantize(quantize(x, Q), Q)
    comp = mu_law_decode(dequantize(quantize(mu_law_encode(x), Q), Q))
    assert np.mean((comp - x) ** 2) < np.mean((plain - x) ** 2)


# --- PPM -----------------------------------------------------------------------

def test_ppm_empty_roundtrip():
    blob = ppm_compress([], 4)
    assert ppm_decompress(blob).size == 0
    assert ppm_decompress(blob.to_bytes()).size == 0


@pytest.mark.parametrize("alphabet", [2, 3, 16, 255, 256])
def test_ppm_random_roundtrip(alphabet):
    x = np.random.default_rng(alphabet).integers(0, alphabet, 10_000)
    assert np.array_equal(ppm_decompress(ppm_compress(x, alphabet).to_bytes()), x)


@pytest.mark.parametrize("order", [0, 1, 2, 3, 5])
def test_ppm_orders(order):
    x = np.random.default_rng(order).integers(0, 5, 3000)
    assert np.array_equal(ppm_decompress(ppm_compress(x, 5, order)), x)


@settings(max_examples=60, deadline=None)
@given(st.integers(2, 256).flatmap(lambda a: st.tuples(st.just(a), st.lists(st.integers(0, a - 1), max_size=400))))
def test_ppm_roundtrip_property(case):
    alphabet, xs = case
    x = np.array(xs, dtype=np.int64)
    assert np.array_equal(ppm_decompress(ppm_compress(x, alphabet).to_bytes()), x)


@pytest.mark.parametrize("seq", [
    np.zeros(5000, dtype=int),
    np.tile([0, 255], 4000),
    np.arange(20_000) % 256,
    np.repeat(np.arange(256), 40),
    np.r_[np.zeros(3000, dtype=int), np.arange(256), np.zeros(3000, dtype=int)],
])
def test_ppm_adversarial(seq):
    assert np.array_equal(ppm_decompress(ppm_compress(seq, 256)), seq)


def test_ppm_long_run_triggers_rescaling():
    x = np.r_[np.zeros(150_000, dtype=int), [1, 0, 1]]
    assert np.array_equal(ppm_decompress(ppm_compress(x, 2)), x)


def test_ppm_constant_compresses_below_one_percent():
    blob = ppm_compress(np.full(19200, 3), 16)
    assert len(blob) < 0.01 * 19200


def test_ppm_skewed_source_beats_raw_entropy_bound():
    rng = np.random.default_rng(3)
    p = np.array([0.7, 0.2, 0.05, 0.05])
    x = rng.choice(4, 50_000, p=p)
    entropy_bits = -(p * np.log2(p)).sum() * x.size
    assert len(ppm_compress(x, 4).payload) * 8 < 1.05 * entropy_bits


def test_ppm_corruption_detected():
    data = bytearray(ppm_compress(np.arange(1000) % 7, 7).to_bytes())
    data[HEADER_SIZE + 3] ^= 0x10
    with pytest.raises(DecodeError):
        ppm_decompress(bytes(data))
    with pytest.raises(DecodeError):
        ppm_decompress(b"XXXX" + bytes(data[4:]))
    with pytest.raises(DecodeError):
        ppm_decompress(bytes(data[:10]))


def test_ppm_rejects_bad_symbols():
    with pytest.raises(ConfigError):
        ppm_compress([0, 4], 4)
    with pytest.raises(ConfigError):
        ppm_compress([0], 1)


def test_blob_header_is_64_bytes_little_endian():
    blob = ppm_compress([1, 2, 3], 4, shape=(1, 3), vmin=-2.5, vmax=7.0, mu=255.0)
    raw = blob.to_bytes()
    assert raw[:4] == b"WPPM"
    assert len(raw) == 64 + len(blob.payload) == len(blob)
    assert int.from_bytes(raw[8:12], "little") == 1
    assert int.from_bytes(raw[12:16], "little") == 3
    back = CompressedBlob.from_bytes(raw)
    assert (back.vmin, back.vmax, back.mu, back.alphabet, back.order) == (-2.5, 7.0, 255.0, 4, 3)


# --- field codec ---------------------------------------------------------------

def test_field_codec_error_bounded_by_bin_width():
    rng = np.random.default_rng(4)
    field = rng.uniform(2, 12, (40, 50))
    for Q in (8, 16):
        rec = decompress_field(compress_field(field, PPMMethod(Q)).to_bytes())
        half_range = (field.max() - field.min()) / 2
        assert np.max(np.abs(rec - field)) <= half_range * decompanded_bin_widths(Q).max() + 1e-9


def test_field_codec_lossless_mode():
    field = np.random.default_rng(5).uniform(0, 10, (30, 20)).astype(np.float32).astype(np.float64)
    rec = decompress_field(compress_field(field, PPMMethod(None)))
    assert np.array_equal(rec, field)


def test_field_codec_constant_field():
    field = np.full((16, 16), 4.5)
    rec = decompress_field(compress_field(field, PPMMethod(16)))
    assert np.array_equal(rec, field)


# --- bicubic -------------------------------------------------------------------

def test_cubic_kernel_values():
    assert cubic_kernel(0.0) == 1.0
    assert cubic_kernel(1.0) == 0.0
    assert cubic_kernel(2.0) == 0.0
    assert cubic_kernel(0.5) == pytest.approx(0.5625)  # 1.5/8 - 2.5/4 + 1
    xs = np.linspace(-0.99, 0.99, 41)
    total = sum(cubic_kernel(xs + k) for k in range(-3, 4))
    assert np.allclose(total, 1.0, atol=1e-12)


@pytest.mark.parametrize("factor", [0.125, 0.25, 0.5, 0.77, 1.0, 1.5, 2.0, 3.3, 8.0])
def test_bicubic_preserves_constants_exactly(factor):
    out = bicubic_resize(np.full((24, 32), 4.2), factor)
    assert np.all(out == 4.2)


def test_bicubic_identity():
    x = np.random.default_rng(6).normal(size=(17, 23))
    assert np.array_equal(bicubic_resize(x, 1.0), x)


def test_bicubic_shapes():
    x = np.random.default_rng(7).normal(size=(120, 160))
    small = bicubic_resize(x, 1 / 8)
    assert small.shape == (15, 20)
    assert bicubic_resize(small, 8).shape == (120, 160)
    assert bicubic_resize(x, 1.5).shape == (180, 240)


def test_bicubic_rejects_collapse():
    with pytest.raises(DomainError):
        bicubic_resize(np.ones((4, 4)), 0.1)
    with pytest.raises(DomainError):
        bicubic_resize(np.ones((4, 4)), 0)


def test_bicubic_reproduces_linear_ramps_in_interior():
    yy, xx = np.mgrid[0:20, 0:30].astype(float)
    x = 0.3 * yy - 0.7 * xx
    out = bicubic_resize(x, 2.0)
    oy, ox = np.mgrid[0:40, 0:60].astype(float)
    expected = 0.3 * ((oy + 0.5) / 2 - 0.5) - 0.7 * ((ox + 0.5) / 2 - 0.5)
    assert np.allclose(out[4:-4, 4:-4], expected[4:-4, 4:-4], atol=1e-10)


@pytest.mark.parametrize("factor", [2.0, 1.5, 0.5, 0.25])
def test_bicubic_matches_pillow_in_interior(factor):
    # Pillow's float-mode BICUBIC is the same a=-0.5 antialiased convolution; borders differ
    x = np.random.default_rng(8).normal(size=(48, 64)).astype(np.float32)
    ours = bicubic_resize(x, factor)
    h, w = ours.shape
    theirs = np.asarray(Image.fromarray(x, mode="F").resize((w, h), Image.BICUBIC), dtype=np.float64)
    m = int(math.ceil(3 * max(factor, 1 / factor)))
    assert np.allclose(ours[m:-m, m:-m], theirs[m:-m, m:-m], atol=1e-5)


# --- power law -----------------------------------------------------------------

def test_power_law_values():
    assert power_law_transform(np.array([5.0]), PowerLawSpec(10, 160))[0] == pytest.approx(7.791645796604999)
    x = np.array([[1.0, 2.0], [3.0, 4.0]])
    assert np.array_equal(power_law_transform(x, PowerLawSpec(60, 60)), x)
    back = power_law_transform(power_law_transform(x, PowerLawSpec(10, 160)), PowerLawSpec(160, 10))
    assert np.allclose(back, x, rtol=1e-9, atol=0)


def test_power_law_clamps_negative_with_warning():
    with pytest.warns(RuntimeWarning):
        out = power_law_transform(np.array([-1.0, 2.0]), PowerLawSpec(10, 160))
    assert out[0] == 0.0


@given(st.lists(st.floats(0, 30), min_size=2, max_size=50))
def test_power_law_preserves_argmax(vals):
    v = np.array(vals)
    assert np.argmax(power_law_transform(v, PowerLawSpec(10, 200))) == np.argmax(v)


def test_power_law_rejects_nonpositive_altitude():
    with pytest.raises(ConfigError):
        PowerLawSpec(0, 10)


# --- pipeline ------------------------------------------------------------------

def test_bicubic_pipeline_cr():
    field = np.random.default_rng(9).uniform(3, 9, (120, 160))
    rec, cr = baseline_pipeline(field, BicubicMethod(8), 10, 160)
    assert rec.shape == field.shape
    assert cr == 98.4375
    _, cr4 = baseline_pipeline(field, BicubicMethod(4), 10, 160)
    assert cr4 == 93.75


def test_ppm_pipeline_constant_field():
    field = np.full((32, 32), 6.0)
    rec, cr = baseline_pipeline(field, PPMMethod(16), 10, 10)
    assert np.max(np.abs(rec - field)) <= 1e-12
    assert 0 < cr < 100


def test_lossless_pipeline_same_altitude():
    field = np.random.default_rng(10).uniform(0, 10, (24, 24)).astype(np.float32).astype(np.float64)
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        rec, _ = baseline_pipeline(field, PPMMethod(None), 60, 60)
    assert np.array_equal(rec, field)


def test_pipeline_transfers_altitude():
    field = np.full((16, 16), 5.0)
    rec, _ = baseline_pipeline(field, BicubicMethod(4), 10, 160)
    assert np.allclose(rec, 5.0 * 16**0.16)


def test_pipeline_rejects_bad_method():
    with pytest.raises(ConfigError):
        baseline_pipeline(np.ones((16, 16)), "zstd", 10, 160)
    with pytest.raises(ConfigError):
        baseline_pipeline(np.ones((15, 16)), BicubicMethod(4), 10, 160)


def test_lossless_mode_keeps_double_precision():
    field = np.random.default_rng(11).uniform(0, 10, (12, 20))
    blob = compress_field(field, PPMMethod(None))
    assert blob.n_symbols == 8 * field.size
    rec, cr = baseline_pipeline(field, PPMMethod(None), 160, 160)
    assert np.array_equal(rec, field)
    assert cr < 100
