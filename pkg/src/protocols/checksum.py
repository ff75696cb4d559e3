"""Internet checksum (ones'-complement sum of 16-bit words)."""

import struct


def ones_complement_sum(data: bytes) -> int:
    """Folded 16-bit ones'-complement sum. Odd lengths are padded with a zero byte."""
    if len(data) % 2:
        data += b"\x00"
    total = sum(struct.unpack(f"!{len(data) // 2}H", data))
    while total >> 16:
        total = (total & 0xFFFF) + (total >> 16)
    return total


def inet_checksum(data: bytes) -> int:
    """Internet checksum of ``data``.

    A buffer whose checksum field is already filled in sums to 0xFFFF, so its
    checksum evaluates to zero.
    """
    return ~ones_complement_sum(data) & 0xFFFF


def verifies(data: bytes) -> bool:
    """True if ``data`` (checksum field included) sums to 0xFFFF."""
    return ones_complement_sum(data) == 0xFFFF
