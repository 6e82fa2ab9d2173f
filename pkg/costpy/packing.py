"""Ciphertext and message counting for partitioned matrix products."""
import logging
import math
from fractions import Fraction
from functools import lru_cache

from costpy.errors import ConfigError

logger = logging.getLogger(__name__)

MEM_LIMIT = 2**31
DEFAULT_LP = 1
DEFAULT_BP = 1000


def cdiv(a: int, b: int) -> int:
    """Integer ceiling division."""
    return -(-a // b)


@lru_cache(maxsize=4096)
def _ct_count(p, q, r, deg, lp, bp):
    min_cost = None
    s_ct = r_ct = 0
    for d1 in range(1, min(deg, p + 1)):
        bn1 = cdiv(p, d1)
        d2 = 1
        while d2 <= q and d1 * d2 <= deg:
            bn2 = cdiv(q, d2)
            d3 = min(r, cdiv(deg, d1 * d2))
            bn3 = cdiv(r, d3)
            s_cand = min(bn1, bn3) * bn2
            r_cand = cdiv(bn1 * bn3, d2)
            num1 = cdiv(bn1 * bn3, deg) * d2
            num2 = bn1 * bn2 * bn3
            cost = (s_cand + r_cand) * bp + num1 * lp + num2 * lp / 10
            if min_cost is None or cost <= min_cost:
                min_cost = cost
                s_ct, r_ct = s_cand, r_cand
            d2 *= 2
    return s_ct, r_ct


def cheetah_matmul_ct_count(
    p: int,
    q: int,
    r: int,
    deg: int,
    lp=DEFAULT_LP,
    bp=DEFAULT_BP
) -> tuple[int, int]:
    """Numbers of sent and response ciphertexts of an HE matrix product.

    Searches the block partitions (d1, d2, d3) of a `p x q` by `q x r`
    product and keeps the cheapest one under the weighted price
    `(sent + response) * bp + num_1 * lp + num_2 * lp / 10`, with `d1` below
    `min(deg, p + 1)`. Ties go to the partition visited last.

    Parameters
    ----------
    p, q, r : int
      Matrix dimensions (rows, inner, columns), all at least 1.
    deg : int
      HE polynomial degree.
    lp, bp : float
      Local computation price and bandwidth price.

    """
    for name, value in (('p', p), ('q', q), ('r', r), ('deg', deg)):
        if value < 1:
            raise ConfigError(f"{name}={value} must be at least 1")
    res = _ct_count(p, q, r, deg, Fraction(lp), Fraction(bp))
    logger.debug(f"Ciphertext count for ({p}, {q}, {r}, {deg=}): {res}")
    return res


@lru_cache(maxsize=4096)
def semi2k_matmul_msg_count(p: int, q: int, r: int, k: int) -> int:
    """Number of ring elements exchanged by a memory-bounded matrix product.

    Small products send both inputs in one piece; large ones are cut into
    blocks that fit `MEM_LIMIT` bits and the per-block input sizes are summed.
    """
    if k < 1:
        raise ConfigError(f"k={k} must be at least 1")
    if p == 0 or q == 0 or r == 0 or (p * q + q * r) * k < MEM_LIMIT:
        return p * q + q * r
    if q > (p + r) * 8:
        expected_pr_step = p + r
        q_step = max(1, math.ceil(MEM_LIMIT / k / expected_pr_step))
    elif (p + r) > q * 8:
        q_step = q
        expected_pr_step = max(1, math.ceil(MEM_LIMIT / k / q_step))
    else:
        pr_step = math.sqrt((p + r) * MEM_LIMIT / (q * k))
        q_step = max(1, math.ceil(MEM_LIMIT / k / pr_step))
        expected_pr_step = max(1, math.ceil(pr_step))
    p_step = max(1, cdiv(expected_pr_step * p, p + r))
    r_step = max(1, cdiv(expected_pr_step * r, p + r))
    res = 0
    for i in range(cdiv(p, p_step)):
        p_sub = min(p - p_step * i, p_step)
        for j in range(cdiv(q, q_step)):
            q_sub = min(q - q_step * j, q_step)
            for l in range(cdiv(r, r_step)):
                r_sub = min(r - r_step * l, r_step)
                res += p_sub * q_sub + q_sub * r_sub
    logger.debug(
        f"Message count for ({p}, {q}, {r}, {k=}): {res} "
        f"(steps {p_step}, {q_step}, {r_step})"
    )
    return res
