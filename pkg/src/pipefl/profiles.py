"""Per-client computation-time profiles and their sorted rank view.

Clients are ranked by ascending computation time; ties are broken by
ascending ``client_id`` so that every downstream cluster plan is
reproducible.
"""

from __future__ import annotations

import csv
from bisect import bisect_right
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

from .errors import EmptyCounts, EmptyInput, FormatError, InvalidRange, NonPositiveSigma


@dataclass(frozen=True)
class ClientProfile:
    client_id: int
    n_m: int
    tau_m: float

    def __post_init__(self) -> None:
        if self.n_m < 1:
            raise InvalidRange(f"client {self.client_id}: n_m must be >= 1, got {self.n_m}")
        if not self.tau_m > 0:
            raise InvalidRange(f"client {self.client_id}: tau_m must be > 0, got {self.tau_m}")


@dataclass(frozen=True)
class OrderedProfiles:
    """Profiles sorted by computation time.

    ``rank`` maps ``client_id`` to its 1-based position ``S_m``; ``taus[i-1]``
    is the step function value at rank ``i``.
    """

    profiles: tuple[ClientProfile, ...]
    rank: dict[int, int] = field(compare=False)

    @property
    def M(self) -> int:
        return len(self.profiles)

    @property
    def taus(self) -> list[float]:
        return [p.tau_m for p in self.profiles]

    @property
    def tau_min(self) -> float:
        return self.profiles[0].tau_m

    @property
    def tau_max(self) -> float:
        return self.profiles[-1].tau_m

    def tau_at(self, rank: int) -> float:
        """Step function lookup: computation time of the client with ``rank`` (1-based)."""
        if not 1 <= rank <= self.M:
            raise IndexError(f"rank {rank} outside 1..{self.M}")
        return self.profiles[rank - 1].tau_m

    def count_within(self, deadline: float) -> int:
        """Largest rank whose computation time is <= ``deadline`` (0 if none)."""
        return bisect_right(self.taus, deadline)

    def client_at(self, rank: int) -> int:
        return self.profiles[rank - 1].client_id


def profiles_from_counts(counts: Sequence[int], sigma: float) -> list[ClientProfile]:
    """Profiles with ``tau_m = sigma * n_m``; ids follow input order."""
    if len(counts) == 0:
        raise EmptyCounts("at least one client count is required")
    if not sigma > 0:
        raise NonPositiveSigma(f"sigma must be > 0, got {sigma}")
    return [ClientProfile(i, int(n), sigma * int(n)) for i, n in enumerate(counts)]


def order_profiles(profiles: Iterable[ClientProfile]) -> OrderedProfiles:
    ordered = tuple(sorted(profiles, key=lambda p: (p.tau_m, p.client_id)))
    if not ordered:
        raise EmptyInput("cannot order an empty profile set")
    rank = {p.client_id: i for i, p in enumerate(ordered, start=1)}
    if len(rank) != len(ordered):
        raise InvalidRange("duplicate client_id in profile set")
    return OrderedProfiles(ordered, rank)


def uniform_tau_profiles(M: int, tau_lo: float, tau_hi: float) -> list[ClientProfile]:
    """Deterministic evenly spaced computation times from ``tau_lo`` to ``tau_hi``."""
    if M < 2 or not 0 < tau_lo <= tau_hi:
        raise InvalidRange(f"need M >= 2 and 0 < tau_lo <= tau_hi, got M={M}, [{tau_lo}, {tau_hi}]")
    # multiply before dividing so grid points that are integers come out exact
    return [
        ClientProfile(i, 1, tau_lo + (tau_hi - tau_lo) * i / (M - 1))
        for i in range(M)
    ]


def read_profiles_csv(path: str | Path, sigma: float | None = None) -> list[ClientProfile]:
    """Read a ``client_id,n_m,tau_m`` CSV.

    ``tau_m`` may be blank or missing when ``sigma`` is given, in which case it
    is computed as ``sigma * n_m``. Parse problems raise :class:`FormatError`
    with the offending line number.
    """
    if sigma is not None and not sigma > 0:
        raise NonPositiveSigma(f"sigma must be > 0, got {sigma}")
    path = Path(path)
    out: list[ClientProfile] = []
    with path.open(newline="") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        if "client_id" not in header or "n_m" not in header:
            raise FormatError(f"{path}:1: header must contain client_id,n_m[,tau_m], got {header}")
        for row in reader:
            line = reader.line_num
            try:
                cid = int(row["client_id"])
                n_m = int(row["n_m"])
                raw_tau = (row.get("tau_m") or "").strip()
                if sigma is not None:
                    tau = sigma * n_m
                elif raw_tau:
                    tau = float(raw_tau)
                else:
                    raise FormatError(f"{path}:{line}: tau_m missing and no sigma supplied")
            except (TypeError, ValueError) as exc:
                if isinstance(exc, FormatError):
                    raise
                raise FormatError(f"{path}:{line}: {exc}") from exc
            try:
                out.append(ClientProfile(cid, n_m, tau))
            except InvalidRange as exc:
                raise FormatError(f"{path}:{line}: {exc}") from exc
    if not out:
        raise EmptyInput(f"{path}: no client rows")
    return out


def write_profiles_csv(path: str | Path, profiles: Iterable[ClientProfile]) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["client_id", "n_m", "tau_m"])
        for p in profiles:
            w.writerow([p.client_id, p.n_m, repr(p.tau_m)])
