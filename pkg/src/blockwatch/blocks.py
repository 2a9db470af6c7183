"""Address parsing and prefix keys for per-block traffic accounting.

Detection state is kept per /24 (IPv4) or /48 (IPv6) prefix. A block that
carries too little traffic to judge on its own can be coarsened one step,
to its /16 or /32 aggregate key, and scored together with its siblings.
"""

from __future__ import annotations

import ipaddress
from dataclasses import dataclass
from enum import Enum
from functools import total_ordering


class Family(Enum):
    """Address family; values are the conventional IP version numbers."""

    V4 = 4
    V6 = 6

    @property
    def label(self) -> str:
        return "v4" if self is Family.V4 else "v6"

    @classmethod
    def from_label(cls, text: str) -> "Family":
        try:
            return {"v4": cls.V4, "v6": cls.V6}[text.strip().lower()]
        except KeyError:
            raise ValueError(f"unknown address family {text!r}") from None


_ADDRESS_BYTES = {Family.V4: 4, Family.V6: 16}
_BLOCK_BYTES = {Family.V4: 3, Family.V6: 6}      # /24 and /48
_AGGREGATE_BYTES = {Family.V4: 2, Family.V6: 4}  # /16 and /32


class AlreadyAggregatedError(ValueError):
    """Raised when coarsening a key that is already an aggregate."""


@dataclass(frozen=True)
class Address:
    """A single IP address in canonical packed form."""

    family: Family
    packed: bytes

    def __post_init__(self) -> None:
        want = _ADDRESS_BYTES[self.family]
        if len(self.packed) != want:
            raise ValueError(
                f"{self.family.label} address needs {want} bytes, got {len(self.packed)}"
            )

    def __str__(self) -> str:
        return str(ipaddress.ip_address(self.packed))


@total_ordering
@dataclass(frozen=True)
class BlockId:
    """Aggregation key: the high-order bytes of an address.

    3 bytes (V4) or 6 bytes (V6) for detection blocks; 2 or 4 bytes for
    the one-step spatial aggregates. Host bits are zero by construction.
    Ordered by (family, prefix bytes).
    """

    family: Family
    prefix: bytes

    def __post_init__(self) -> None:
        n = len(self.prefix)
        if n not in (_BLOCK_BYTES[self.family], _AGGREGATE_BYTES[self.family]):
            raise ValueError(f"bad prefix length {n} bytes for {self.family.label} key")

    @property
    def is_aggregate(self) -> bool:
        return len(self.prefix) == _AGGREGATE_BYTES[self.family]

    @property
    def prefix_len(self) -> int:
        return 8 * len(self.prefix)

    @property
    def granularity(self) -> str:
        return "aggregate" if self.is_aggregate else "block"

    def network(self) -> ipaddress.IPv4Network | ipaddress.IPv6Network:
        padded = self.prefix + b"\x00" * (_ADDRESS_BYTES[self.family] - len(self.prefix))
        return ipaddress.ip_network((padded, self.prefix_len))

    def __str__(self) -> str:
        return str(self.network())

    def __lt__(self, other: "BlockId") -> bool:
        if not isinstance(other, BlockId):
            return NotImplemented
        return (self.family.value, self.prefix) < (other.family.value, other.prefix)


def parse_address(text: str) -> Address:
    """Parse dotted-quad IPv4 or textual IPv6 into a canonical Address.

    IPv4-mapped IPv6 forms (::ffff:a.b.c.d) normalize to V4.
    """
    try:
        addr = ipaddress.ip_address(text.strip())
    except ValueError:
        raise ValueError(f"malformed IP address {text!r}") from None
    if isinstance(addr, ipaddress.IPv6Address):
        mapped = addr.ipv4_mapped
        if mapped is not None:
            addr = mapped
    if isinstance(addr, ipaddress.IPv4Address):
        return Address(Family.V4, addr.packed)
    return Address(Family.V6, addr.packed)


def block_of(addr: Address) -> BlockId:
    """Detection key for an address: top 24 bits (V4) or 48 bits (V6)."""
    return BlockId(addr.family, addr.packed[: _BLOCK_BYTES[addr.family]])


def superblock_of(block: BlockId) -> BlockId:
    """One step coarser spatial key: /24 -> /16, /48 -> /32.

    Aggregate keys are terminal; coarsening one raises AlreadyAggregatedError.
    """
    if block.is_aggregate:
        raise AlreadyAggregatedError(f"{block} is already an aggregate key")
    return BlockId(block.family, block.prefix[: _AGGREGATE_BYTES[block.family]])


_PREFIX_BYTES_BY_LEN = {
    (Family.V4, 24): 3,
    (Family.V4, 16): 2,
    (Family.V6, 48): 6,
    (Family.V6, 32): 4,
}


def parse_block(text: str) -> BlockId:
    """Parse a CIDR string ("192.0.2.0/24", "2001:db8::/32") into a key."""
    try:
        net = ipaddress.ip_network(text.strip())
    except ValueError:
        raise ValueError(f"malformed block {text!r}") from None
    fam = Family.V4 if net.version == 4 else Family.V6
    nbytes = _PREFIX_BYTES_BY_LEN.get((fam, net.prefixlen))
    if nbytes is None:
        raise ValueError(f"unsupported prefix length /{net.prefixlen} in {text!r}")
    return BlockId(fam, net.network_address.packed[:nbytes])
