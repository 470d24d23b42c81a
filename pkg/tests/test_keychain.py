import random

import pytest

from esae.errors import ConfigurationError, StateError
from esae.keychain import KdfParams, SessionKey, derive_session_key, init_keychain
from esae.sakp import SakpConfig, SemanticDigest
from tests.oracles.pbkdf2_ref import pbkdf2, session_key as oracle_key


def digest(text):
    return SemanticDigest(text.encode(), text.count(":"))


def test_oracle_matches_rfc_vectors():
    # RFC 7914 section 11 PBKDF2-HMAC-SHA256 vectors
    assert pbkdf2("sha256", b"passwd", b"salt", 1, 64).hex().startswith("55ac046e56e3089fec1691c22544b605")
    assert pbkdf2("sha256", b"password", b"salt", 1, 32).hex() == \
        "120fb6cffcf8b32c43e7225256c4f837a86548c92ccc35480805987cb70be17b"


def test_golden_vectors(keychain_vectors):
    for v in keychain_vectors:
        kdf = KdfParams(iterations=v["iterations"], salt_context=v["salt_context"].encode(), prf=v["prf"])
        key = derive_session_key([digest(h) for h in v["history"]], v["index"], kdf)
        assert key.key_bytes.hex() == v["key_hex"]
        assert key.session_index == v["index"]


def test_golden_vector_spec_example(keychain_vectors):
    v = keychain_vectors[0]
    assert (v["history"], v["index"], v["iterations"]) == (["0:12|2:465"], 2, 10_000)
    assert derive_session_key([digest("0:12|2:465")], 2).key_bytes.hex() == v["key_hex"]


def test_index_binding_against_oracle():
    h = [digest("0:12|2:465")]
    k2 = derive_session_key(h, 2)
    k3 = derive_session_key(h, 3)
    assert k2.key_bytes != k3.key_bytes
    assert k2.key_bytes == oracle_key([b"0:12|2:465"], 2)
    assert k3.key_bytes == oracle_key([b"0:12|2:465"], 3)


def test_separator_prevents_concatenation_ambiguity(fast_kdf):
    a = derive_session_key([b"1:2", b"3:4"], 2, fast_kdf)
    b = derive_session_key([b"1:", b"23:4"], 2, fast_kdf)
    assert a.key_bytes != b.key_bytes


def test_init_keychain():
    cfg = SakpConfig()
    s = init_keychain(bytes(16), cfg)
    assert s.session_index == 1 and len(s.history) == 0
    assert init_keychain(bytes(16), cfg).current == s.current
    with pytest.raises(ConfigurationError):
        init_keychain(bytes(15), cfg)


def test_empty_history_is_state_error():
    with pytest.raises(StateError):
        derive_session_key([], 2)


@pytest.mark.parametrize("kw", [dict(iterations=999), dict(output_len=32), dict(prf="nope")])
def test_kdf_params_validation(kw):
    with pytest.raises(ConfigurationError):
        KdfParams(**kw)


def test_session_key_repr_hides_material():
    assert "\\x" not in repr(SessionKey(b"\xff" * 16, 1))


def test_window_one_depends_on_last_digest_only(fast_kdf):
    cfg = SakpConfig(window=1)
    a, b = init_keychain(bytes(16), cfg, fast_kdf), init_keychain(bytes(16), cfg, fast_kdf)
    a.advance(digest("1:1"))
    b.advance(digest("9:9"))
    a.advance(digest("5:5"))
    b.advance(digest("5:5"))
    assert a.current == b.current


def test_ring_buffer_window_two(fast_kdf):
    s = init_keychain(bytes(16), SakpConfig(window=2), fast_kdf)
    d1, d2, d3 = digest("1:1"), digest("2:2"), digest("3:3")
    for d in (d1, d2, d3):
        s.advance(d)
    assert list(s.history) == [d2, d3]
    assert s.session_index == 4
    assert s.current == derive_session_key([d2, d3], 4, fast_kdf)
    assert s.current.key_bytes == oracle_key([b"2:2", b"3:3"], 4, iterations=1000)


def test_reciprocity_and_window_locality(fast_kdf):
    rng = random.Random(4)
    for window in (1, 2, 3, 5):
        cfg = SakpConfig(window=window)
        seq = [digest(f"{rng.randrange(80)}:{rng.randrange(900)}") for _ in range(12)]
        a, b = init_keychain(bytes(16), cfg, fast_kdf), init_keychain(bytes(16), cfg, fast_kdf)
        # b sees a different prefix that is evicted before the end
        b_seq = [digest("77:7")] * 4 + seq[4:]
        for x, y in zip(seq, b_seq):
            a.advance(x)
            b.advance(y)
        assert a.current == b.current
        assert a.session_index == 13


def test_sensitivity_single_byte(fast_kdf):
    rng = random.Random(11)
    base = [b"12:400|3:15", b"0:0|79:899", b"EMPTY"]
    ref = derive_session_key(base, 5, fast_kdf).key_bytes
    seen = {ref}
    for _ in range(200):
        i = rng.randrange(len(base))
        pos = rng.randrange(len(base[i]))
        new = bytearray(base[i])
        new[pos] = (new[pos] + rng.randrange(1, 256)) % 256
        hist = list(base)
        hist[i] = bytes(new)
        key = derive_session_key(hist, 5, fast_kdf).key_bytes
        assert key != ref
        seen.add(key)
