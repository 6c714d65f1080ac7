from otweights import PreferencePair, TokenSeq


def make_seq(rng, n, d=8, hidden_scale=0.35, q_scale=0.25):
    """Random response with moderate score and hidden-state scales.

    The scales keep transport weights and loss gradients well away from
    the underflow regime, so relative finite-difference comparisons stay
    meaningful.
    """
    logp_ref = -rng.uniform(0.2, 4.0, size=n)
    q = q_scale * rng.standard_normal(n)
    return TokenSeq(
        token_ids=rng.integers(0, 1000, size=n),
        logp_policy=logp_ref + q,
        logp_ref=logp_ref,
        hidden=hidden_scale * rng.standard_normal((n, d)),
    )


def make_pair(rng, n_c=None, n_r=None, d=8, pair_id="pair", **kw):
    if n_c is None:
        n_c = int(rng.integers(2, 9))
    if n_r is None:
        n_r = int(rng.integers(2, 9))
    return PreferencePair(pair_id, make_seq(rng, n_c, d, **kw), make_seq(rng, n_r, d, **kw))
