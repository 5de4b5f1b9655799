"""Crash-tolerant ordering: total-order log, batch cutting, block sealing.

The cluster runs three roles (3 coordinators, 4 brokers, 3 sequencers), each
instance Up or Down. It stays available while no role has more than one
instance Down; an unavailable cluster rejects submissions, which callers count
as errors. Internals are modeled as one logical replicated log gated by role
health rather than protocol-faithfully.

Batches are cut from the oldest pending envelopes when the pending count
reaches max_message_count, pending bytes reach max_batch_bytes (the envelope
crossing the byte boundary is included, so a block may exceed the limit by at
most one envelope), or the oldest pending envelope reaches batch_timeout.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .credential import KeyPair, sign_payload
from .ledger import Block, Transaction, compute_data_hash, compute_block_hash

__all__ = [
    "ROLES",
    "ROLE_SIZES",
    "BatchConfig",
    "Envelope",
    "SubmitResult",
    "OrderingCluster",
    "seal_block",
]

ROLES = ("coordinator", "broker", "sequencer")
ROLE_SIZES = {"coordinator": 3, "broker": 4, "sequencer": 3}


@dataclass(frozen=True)
class BatchConfig:
    max_message_count: int = 10
    max_batch_bytes: int = 512 * 1024
    batch_timeout_ms: int = 40

    def __post_init__(self):
        if self.max_message_count <= 0 or self.max_batch_bytes <= 0 or self.batch_timeout_ms <= 0:
            raise ValueError("batch parameters must be strictly positive")

    @property
    def batch_timeout_us(self) -> int:
        return self.batch_timeout_ms * 1000


@dataclass(frozen=True)
class Envelope:
    transaction: Transaction
    received_at: int  # simulated microseconds
    size_bytes: int = 0


@dataclass(frozen=True)
class SubmitResult:
    accepted: bool

    @property
    def unavailable(self) -> bool:
        return not self.accepted


class OrderingCluster:
    """Replicated sequencing service with per-role instance health."""

    def __init__(self, batch_config: BatchConfig | None = None):
        self.batch = batch_config or BatchConfig()
        self.status = {role: [True] * ROLE_SIZES[role] for role in ROLES}
        self.log: list[Envelope] = []
        self._seen_tx_ids: set[bytes] = set()
        self._cursor = 0  # log index of the first not-yet-batched envelope

    @property
    def available(self) -> bool:
        """Up iff every role has at most one instance down."""
        return all(sum(1 for up in ups if not up) <= 1 for ups in self.status.values())

    def set_instance_status(self, role: str, index: int, up: bool) -> None:
        if role not in ROLE_SIZES:
            raise ValueError(f"unknown role: {role!r}")
        if not 0 <= index < ROLE_SIZES[role]:
            raise ValueError(f"{role} index {index} out of range")
        self.status[role][index] = up

    def lead_instance(self, role: str) -> int | None:
        """Lowest-index Up instance of a role, or None if all are down."""
        for index, up in enumerate(self.status[role]):
            if up:
                return index
        return None

    def submit(self, envelope: Envelope) -> SubmitResult:
        """Append to the replicated log exactly once, if available."""
        if not self.available:
            return SubmitResult(accepted=False)
        tx_id = envelope.transaction.tx_id
        if tx_id in self._seen_tx_ids:
            return SubmitResult(accepted=True)
        self._seen_tx_ids.add(tx_id)
        self.log.append(envelope)
        return SubmitResult(accepted=True)

    @property
    def pending(self) -> list[Envelope]:
        return self.log[self._cursor :]

    def pending_count(self) -> int:
        return len(self.log) - self._cursor

    def oldest_pending_at(self) -> int | None:
        if self._cursor >= len(self.log):
            return None
        return self.log[self._cursor].received_at

    def next_timeout_deadline(self) -> int | None:
        """Simulated time at which the oldest pending envelope forces a cut."""
        oldest = self.oldest_pending_at()
        if oldest is None:
            return None
        return oldest + self.batch.batch_timeout_us

    def cut_batch(self, now: int) -> list[Envelope] | None:
        """Emit the oldest pending envelopes when a cut rule fires, else None."""
        pending = self.pending_count()
        if pending == 0:
            return None
        count_ready = pending >= self.batch.max_message_count
        bytes_ready = self._pending_bytes_reach_limit()
        oldest = self.log[self._cursor].received_at
        timeout_ready = now - oldest >= self.batch.batch_timeout_us
        if not (count_ready or bytes_ready or timeout_ready):
            return None
        batch: list[Envelope] = []
        total_bytes = 0
        while self._cursor < len(self.log) and len(batch) < self.batch.max_message_count:
            envelope = self.log[self._cursor]
            batch.append(envelope)
            self._cursor += 1
            total_bytes += envelope.size_bytes
            if total_bytes >= self.batch.max_batch_bytes:
                break
        return batch

    def _pending_bytes_reach_limit(self) -> bool:
        total = 0
        limit = self.batch.max_batch_bytes
        for index in range(self._cursor, min(len(self.log), self._cursor + self.batch.max_message_count)):
            total += self.log[index].size_bytes
            if total >= limit:
                return True
        return False


def seal_block(batch: list[Envelope], prev_tip: tuple, sealer_key: KeyPair) -> Block:
    """Seal a batch into the next block after `prev_tip` = (number, digest)."""
    if not batch:
        raise ValueError("cannot seal an empty batch")
    prev_number, prev_digest = prev_tip
    transactions = tuple(envelope.transaction for envelope in batch)
    data_hash = compute_data_hash(transactions)
    number = prev_number + 1
    header_hash = compute_block_hash(number, prev_digest, data_hash)
    signature = sign_payload(sealer_key.scheme_id, sealer_key.private_key, header_hash)
    return Block(
        number=number,
        prev_hash=prev_digest,
        data_hash=data_hash,
        transactions=transactions,
        sealer_signature=signature,
    )
