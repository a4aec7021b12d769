"""Domain model: owners, partitions, transfers, owner permutations, RNG streams.

Entry ids are opaque non-negative ints. An owner partition maps owner ids to
entry sets; owner entry sets may overlap (owners can hold copies of the same
entry), and an owner may be empty. All types are immutable after construction;
mutation happens only by building new values (see apply_transfer).
"""

from __future__ import annotations

from collections.abc import Collection, Iterable, Mapping
from dataclasses import dataclass, field

import numpy as np

EntryId = int
OwnerId = str


class ShapcfError(Exception):
    """Base class for contract violations."""


class MalformedInput(ShapcfError):
    """Input file or config does not match its documented shape."""


class UnknownColumn(ShapcfError):
    """A named column is absent from the dataset."""


class UnknownOwner(ShapcfError):
    """An owner id is absent from the partition."""


class SameOwner(ShapcfError):
    """An operation on an owner pair was given the same owner twice."""


class SingletonOwner(ShapcfError):
    """Power of an entry is undefined when its owner has only that entry."""


class DeltaNotOwned(ShapcfError):
    """A transfer names entries outside the source owner's set."""


class TooManyOwners(ShapcfError):
    """Exact enumeration was requested above its owner-count limit."""


class TooLarge(ShapcfError):
    """Brute-force search was requested above its entry-count limit."""


class SizeOverflow(ShapcfError):
    """A generator was asked for owner sizes exceeding the available entries."""


@dataclass(frozen=True)
class OwnerPartition:
    """Assignment of entries to named owners.

    Parameters
    ----------
    owners : mapping of owner id to an iterable of entry ids.

    At least two owners are required. The mapping is copied and normalized to
    frozensets; composed coalition entry sets are cached per instance since
    estimators revisit the same coalitions constantly.
    """

    owners: dict[OwnerId, frozenset[EntryId]]
    _composed: dict[frozenset[OwnerId], frozenset[EntryId]] = field(
        default_factory=dict, repr=False, compare=False
    )

    def __post_init__(self) -> None:
        normalized = {str(o): frozenset(int(e) for e in ents) for o, ents in self.owners.items()}
        if len(normalized) < 2:
            raise MalformedInput(f"a partition needs at least 2 owners, got {len(normalized)}")
        object.__setattr__(self, "owners", normalized)

    @property
    def n(self) -> int:
        return len(self.owners)

    def owner_ids(self) -> tuple[OwnerId, ...]:
        return tuple(sorted(self.owners))

    def entries(self, owner: OwnerId) -> frozenset[EntryId]:
        try:
            return self.owners[owner]
        except KeyError:
            raise UnknownOwner(f"unknown owner {owner!r}") from None

    def universe(self) -> frozenset[EntryId]:
        return self.composed(self.owners)

    def composed(self, coalition: Iterable[OwnerId]) -> frozenset[EntryId]:
        """Union of the coalition members' entry sets."""
        key = frozenset(coalition)
        cached = self._composed.get(key)
        if cached is None:
            unknown = key - self.owners.keys()
            if unknown:
                raise UnknownOwner(f"unknown owners {sorted(unknown)}")
            cached = frozenset().union(*(self.owners[o] for o in key)) if key else frozenset()
            self._composed[key] = cached
        return cached


@dataclass(frozen=True)
class Transfer:
    """Move of a set of entries from one owner to another."""

    source: OwnerId
    target: OwnerId
    delta: frozenset[EntryId]

    def __post_init__(self) -> None:
        object.__setattr__(self, "delta", frozenset(int(e) for e in self.delta))
        if self.source == self.target:
            raise SameOwner(f"transfer source and target are both {self.source!r}")


def apply_transfer(partition: OwnerPartition, transfer: Transfer) -> OwnerPartition:
    """Return the partition after moving transfer.delta from source to target.

    Entries leave the source and join the target; other owners are untouched,
    so the union of all owner sets is preserved. The source may end up empty.
    """
    src = partition.entries(transfer.source)
    missing = transfer.delta - src
    if missing:
        raise DeltaNotOwned(
            f"entries {sorted(missing)} are not held by owner {transfer.source!r}"
        )
    owners = dict(partition.owners)
    owners[transfer.source] = src - transfer.delta
    owners[transfer.target] = partition.entries(transfer.target) | transfer.delta
    return OwnerPartition(owners)


@dataclass(frozen=True)
class PermutationSample:
    """One uniformly drawn ordering of all owner ids (empty owners included)."""

    order: tuple[OwnerId, ...]

    def prefix_before(self, targets: Collection[OwnerId]) -> frozenset[OwnerId]:
        """Owners strictly before every target: the run-up to the first of them.

        The prefix excludes the targets, so with an owner pair it has at most
        n - 2 members.
        """
        wanted = set(targets)
        missing = wanted - set(self.order)
        if missing:
            raise UnknownOwner(f"owners {sorted(missing)} absent from permutation")
        prefix: list[OwnerId] = []
        for owner in self.order:
            if owner in wanted:
                break
            prefix.append(owner)
        return frozenset(prefix)


def prefix_before_pair(
    perm: PermutationSample, a: OwnerId, b: OwnerId
) -> frozenset[OwnerId]:
    """Owners preceding both a and b in perm (a and b excluded)."""
    return perm.prefix_before((a, b))


def sample_permutation(
    partition: OwnerPartition, rng: np.random.Generator
) -> PermutationSample:
    """Draw a uniform random ordering of the partition's owners."""
    owners = partition.owner_ids()
    idx = rng.permutation(len(owners))
    return PermutationSample(tuple(owners[i] for i in idx))


def spawn_rng(seed: int, *path: int) -> np.random.Generator:
    """Deterministic child generator for a named component.

    Streams for distinct (seed, *path) tuples are statistically independent;
    the same tuple always yields the same stream.
    """
    return np.random.default_rng(np.random.SeedSequence((int(seed), *(int(p) for p in path))))
