"""End-to-end scenario engine: drives register/verify flows over the simulator.

One `LevelRun` owns a fresh world per offered-TPS level: 27 peers and their
shared replicated ledger, the ordering cluster, per-role service stations, and
ambient gossip/keepalive traffic. Registration follows
client -> peer (REST, endorse) -> ordering (sequence, batch, seal) ->
block fan-out -> per-peer commit -> client ack; verification follows
client -> peer (REST, content query) -> client response.

The canonical chain and world state are applied once, at seal time; per-peer
commit stations model commit timing only. This keeps a single authoritative
replay (the total order every peer receives) without 27 redundant state
copies.

Worst-case query cost is charged per request as
query_per_record_us * (record count). The content scan itself runs once per
level against the immutable preloaded state and is memoized: state does not
change during a verify level, so every scan is the same pure computation.
"""

from __future__ import annotations

import hashlib
import statistics
from dataclasses import dataclass

from .chaincode import (
    ChaincodeContext,
    MedicalCenterRecord,
    WORST_CASE_SCAN,
    register_certificate,
    register_medical_center,
    rich_query,
)
from .credential import CertificateHash, HMAC_SHA256, generate_did, generate_keypair
from .ledger import (
    Chain,
    EU_MEMBER_STATES,
    EndorsementPolicy,
    Transaction,
    WorldState,
    apply_block,
    cert_key,
    endorse_transaction,
)
from .netsim import (
    BandwidthMeter,
    EventQueue,
    MessageLayer,
    ServiceStation,
    TraceWriter,
    build_topology,
)
from .ordering import BatchConfig, Envelope, OrderingCluster, seal_block
from .scenario import ScenarioConfig
from .workload import generate_arrivals

__all__ = ["LevelMetrics", "LevelRun", "run_level", "build_ms_keys"]


@dataclass(frozen=True)
class LevelMetrics:
    tps: float
    requests: int
    mean_response_ms: float
    median_response_ms: float
    p95_response_ms: float
    peer_bandwidth_kb: float
    ordering_bandwidth_kb: float
    busy_fractions: dict
    error_count: int
    saturated: bool
    accepted_submissions: int
    committed_txs: int
    block_count: int
    scan_count: int
    processed_events: int
    request_events: int


def build_ms_keys(scheme_id: str = HMAC_SHA256) -> dict:
    """Deterministic per-member-state endorsement key pairs."""
    keys = {}
    for ms in EU_MEMBER_STATES:
        did = generate_did("ms", ms.encode())
        keys[ms] = generate_keypair(did, b"endorse|" + ms.encode(), scheme_id)
    return keys


def _peer_host(ms: str) -> str:
    return f"peer-{ms}"


def _client_host(ms: str) -> str:
    return f"client-{ms}"


class LevelRun:
    """A single (step, tps level) execution over a fresh simulated world."""

    def __init__(self, config: ScenarioConfig, level, tracer: TraceWriter | None = None):
        self.config = config
        self.level = level
        self.profile = config.service_profile
        self.duration_us = config.duration_seconds * 1_000_000
        self.queue = EventQueue()
        self.meter = BandwidthMeter(window_us=self.duration_us)
        self.topology = build_topology(EU_MEMBER_STATES, config.link)
        self.net = MessageLayer(self.queue, config.link, self.meter, tracer)

        self.ms_keys = build_ms_keys()
        self.policy = EndorsementPolicy(
            roster={ms: kp.public_key for ms, kp in self.ms_keys.items()},
            scheme_id=HMAC_SHA256,
        )
        sealer_did = generate_did("ordering", b"sealer")
        self.sealer_key = generate_keypair(sealer_did, b"sealer", HMAC_SHA256)

        self.chain = Chain()
        self.state = WorldState()
        self.cluster = OrderingCluster(config.batch)

        window = self.duration_us
        self.endorse_stations = {
            ms: ServiceStation(f"endorse-{ms}", window_us=window) for ms in EU_MEMBER_STATES
        }
        self.commit_stations = {
            ms: ServiceStation(f"commit-{ms}", window_us=window) for ms in EU_MEMBER_STATES
        }
        self.query_stations = {
            ms: ServiceStation(f"query-{ms}", workers=self.profile.query_workers, window_us=window)
            for ms in EU_MEMBER_STATES
        }
        self.orderer_station = ServiceStation("orderer", window_us=window)

        self.center_dids = {}
        self.provisioned: list = []
        self.responses_us: list = []
        self.errors = 0
        self.accepted = 0
        self.committed = 0
        self.invalid_txs = 0
        self.started = 0
        self.completed = 0
        self.request_events = 0
        self.inflight_samples: list = []
        self._timer_armed_at: int | None = None
        self._broker_rr = 0
        self._tx_counter = 0
        self._scan_memo: int | None = None
        self._pending_acks: dict = {}

    # ------------------------------------------------------------------
    # world construction

    def _next_tx_id(self) -> bytes:
        self._tx_counter += 1
        tag = "tx|%s|%s|%d|%d" % (
            self.config.step, self.level, self.config.seed, self._tx_counter
        )
        return hashlib.sha256(tag.encode()).digest()[:16]

    def _commit_setup_block(self, txs: list) -> None:
        block = seal_block(
            [Envelope(transaction=tx, received_at=0, size_bytes=0) for tx in txs],
            self.chain.tip if self.chain.blocks else (-1, b"\x00" * 32),
            self.sealer_key,
        )
        self.chain.append_block(block)
        flags = apply_block(self.state, block, self.policy)
        if not all(f.valid for f in flags):
            raise RuntimeError("setup block contained invalid transactions")

    def _build_tx(self, ms: str, response) -> Transaction:
        tx = Transaction(
            tx_id=self._next_tx_id(),
            submitter=ms,
            operation=response.operation,
            read_set=response.read_set,
            write_set=response.write_set,
            payload_size=self.profile.envelope_bytes,
        )
        return endorse_transaction(tx, self.ms_keys[ms])

    def preload(self) -> None:
        """Anchor centers and the pre-provisioned certificate population.

        Setup happens before the measurement window: no messages, no
        bandwidth, sealed directly into setup blocks so the chain replays
        cleanly from genesis.
        """
        center_txs = []
        for ms in EU_MEMBER_STATES:
            did = generate_did("center", b"center|" + ms.encode())
            self.center_dids[ms] = did.text
            ctx = ChaincodeContext(caller=ms, state=self.state)
            response = register_medical_center(
                ctx,
                MedicalCenterRecord(
                    center_id=f"{ms.lower()}-national-1",
                    ms=ms,
                    name=f"{ms} National Vaccination Center",
                    address=f"1 Health Way, {ms}",
                    issuer_did=did.text,
                ),
            )
            center_txs.append(self._build_tx(ms, response))
        self._commit_setup_block(center_txs)

        total = self.config.preloaded_records
        if self.config.step == "verify":
            total += self._planned_requests()
        batch: list = []
        for index in range(total):
            ms = EU_MEMBER_STATES[index % len(EU_MEMBER_STATES)]
            digest = hashlib.sha256(b"preload-cert|%d" % index).digest()
            cert = CertificateHash(digest)
            ctx = ChaincodeContext(caller=ms, state=self.state)
            response = register_certificate(ctx, cert, self.center_dids[ms])
            batch.append(self._build_tx(ms, response))
            self.provisioned.append((ms, cert.hex))
            if len(batch) == 500:
                self._commit_setup_block(batch)
                batch = []
        if batch:
            self._commit_setup_block(batch)

    def _planned_requests(self) -> int:
        return len(generate_arrivals(self.level, self.config.duration_seconds,
                                     self.config.arrival_mode, self.config.seed))

    # ------------------------------------------------------------------
    # ambient traffic

    def _schedule_ambient(self) -> None:
        gossip_step = self.profile.gossip_interval_ms * 1000
        keepalive_step = self.profile.keepalive_interval_ms * 1000
        peers = list(EU_MEMBER_STATES)

        def gossip_tick(at):
            def fire():
                for i, ms in enumerate(peers):
                    neighbor = peers[(i + 1) % len(peers)]
                    self.net.send(
                        _peer_host(ms), _peer_host(neighbor),
                        self.profile.gossip_bytes, "heartbeat", lambda: None,
                    )
                nxt = at + gossip_step
                if nxt <= self.duration_us:
                    gossip_tick(nxt)

            self.queue.schedule(at, fire)

        def keepalive_tick(at):
            def fire():
                coordinator = self.cluster.lead_instance("coordinator")
                if coordinator is not None:
                    host = f"coordinator-{coordinator}"
                    for ms in peers:
                        peer = _peer_host(ms)

                        def pong(peer=peer, host=host):
                            self.net.send(
                                host, peer, self.profile.keepalive_bytes, "heartbeat",
                                lambda: None,
                            )

                        self.net.send(peer, host, self.profile.keepalive_bytes, "heartbeat", pong)
                nxt = at + keepalive_step
                if nxt <= self.duration_us:
                    keepalive_tick(nxt)

            self.queue.schedule(at, fire)

        if gossip_step <= self.duration_us:
            gossip_tick(gossip_step)
        if keepalive_step <= self.duration_us:
            keepalive_tick(keepalive_step)

    def _schedule_faults(self) -> None:
        for at_s, role, index, status in self.config.fault_schedule:
            at_us = round(at_s * 1_000_000)

            def fire(role=role, index=index, status=status):
                self.cluster.set_instance_status(role, index, status == "up")
                self._try_cut()  # resume cutting after a recovery

            self.queue.schedule(at_us, fire)

    def _schedule_sampler(self) -> None:
        for second in range(1, self.config.duration_seconds + 1):
            def sample():
                self.inflight_samples.append(self.started - self.completed)

            self.queue.schedule(second * 1_000_000, sample)

    # ------------------------------------------------------------------
    # register flow

    def _start_register(self, request_index: int, ms: str, arrived_at: int) -> None:
        self.started += 1
        self.request_events += 1
        client = _client_host(ms)
        peer = _peer_host(ms)

        def at_peer():
            done_at = self.queue.clock + self.profile.rest_overhead_us

            def after_rest():
                finish = self.endorse_stations[ms].enqueue(
                    self.queue.clock, self.profile.endorse_us
                )
                self.queue.schedule(finish, endorsed)

            self.queue.schedule(done_at, after_rest)

        def endorsed():
            digest = hashlib.sha256(b"live-cert|%d|%d" % (round(float(self.level) * 1000), request_index)).digest()
            ctx = ChaincodeContext(caller=ms, state=self.state)
            response = register_certificate(
                ctx, CertificateHash(digest), self.center_dids[ms]
            )
            tx = self._build_tx(ms, response)
            if not self.cluster.available:
                self._fail_request(ms, arrived_at)
                return
            sequencer = self.cluster.lead_instance("sequencer")
            seq_host = f"sequencer-{sequencer}"

            def at_sequencer():
                finish = self.orderer_station.enqueue(
                    self.queue.clock, self.profile.orderer_per_envelope_us
                )
                self.queue.schedule(finish, lambda: self._replicate(tx, ms, arrived_at))

            self.net.send(peer, seq_host, self.profile.envelope_bytes, "envelope", at_sequencer)

        self.net.send(client, peer, self.profile.proposal_bytes, "proposal", at_peer)

    def _replicate(self, tx: Transaction, ms: str, arrived_at: int) -> None:
        """Sequencer hands the envelope to a broker; append happens on arrival."""
        ups = [i for i, up in enumerate(self.cluster.status["broker"]) if up]
        if not ups or not self.cluster.available:
            self._fail_request(ms, arrived_at)
            return
        broker = ups[self._broker_rr % len(ups)]
        self._broker_rr += 1
        sequencer = self.cluster.lead_instance("sequencer")
        seq_host = f"sequencer-{sequencer}"

        def at_broker():
            envelope = Envelope(
                transaction=tx,
                received_at=self.queue.clock,
                size_bytes=self.profile.envelope_bytes,
            )
            result = self.cluster.submit(envelope)
            if not result.accepted:
                self._fail_request(ms, arrived_at)
                return
            self.accepted += 1
            self._pending_acks[tx.tx_id] = (ms, arrived_at)
            self._try_cut()

        self.net.send(seq_host, f"broker-{broker}", self.profile.envelope_bytes, "envelope", at_broker)

    def _fail_request(self, ms: str, arrived_at: int) -> None:
        self.errors += 1
        peer = _peer_host(ms)

        def done():
            self.completed += 1

        self.net.send(peer, _client_host(ms), self.profile.endorsement_bytes, "response", done)

    def _try_cut(self) -> None:
        if not self.cluster.available:
            return  # cutting resumes via the fault event that restores health
        while True:
            batch = self.cluster.cut_batch(self.queue.clock)
            if batch is None:
                break
            self._seal_and_fanout(batch)
        self._arm_timer()

    def _arm_timer(self) -> None:
        deadline = self.cluster.next_timeout_deadline()
        if deadline is None or deadline == self._timer_armed_at:
            return
        self._timer_armed_at = deadline
        fire_at = max(deadline, self.queue.clock)

        def fire(expected=deadline):
            if self._timer_armed_at == expected:
                self._timer_armed_at = None
            self._try_cut()

        self.queue.schedule(fire_at, fire)

    def _seal_and_fanout(self, batch: list) -> None:
        block = seal_block(
            batch, self.chain.tip if self.chain.blocks else (-1, b"\x00" * 32), self.sealer_key
        )
        self.chain.append_block(block)
        flags = apply_block(self.state, block, self.policy)
        valid_ids = set()
        for tx, flag in zip(block.transactions, flags):
            if flag.valid:
                self.committed += 1
                valid_ids.add(tx.tx_id)
            else:
                self.invalid_txs += 1
                self.errors += 1
        block_bytes = self.profile.block_base_bytes + self.profile.envelope_bytes * len(batch)
        sequencer = self.cluster.lead_instance("sequencer")
        seq_host = f"sequencer-{sequencer if sequencer is not None else 0}"
        acks_by_ms: dict = {}
        for tx in block.transactions:
            entry = self._pending_acks.pop(tx.tx_id, None)
            if entry is not None and tx.tx_id in valid_ids:
                acks_by_ms.setdefault(entry[0], []).append(entry[1])
        commit_service = self.profile.commit_per_tx_us * len(batch)
        for ms in EU_MEMBER_STATES:
            peer = _peer_host(ms)
            acks = acks_by_ms.get(ms, ())

            def delivered(ms=ms, peer=peer, acks=acks):
                finish = self.commit_stations[ms].enqueue(self.queue.clock, commit_service)

                def committed():
                    for arrived_at in acks:
                        self._send_ack(peer, ms, arrived_at)

                self.queue.schedule(finish, committed)

            self.net.send(seq_host, peer, block_bytes, "block", delivered)

    def _send_ack(self, peer: str, ms: str, arrived_at: int) -> None:
        def done():
            self.completed += 1
            self.responses_us.append(self.queue.clock - arrived_at)

        self.net.send(peer, _client_host(ms), self.profile.endorsement_bytes, "response", done)

    # ------------------------------------------------------------------
    # verify flow

    def _scan_count_now(self) -> int:
        """Full content scan, executed once per level (state is immutable here)."""
        if self._scan_memo is None:
            ms, cert_hex = self.provisioned[-1]
            ctx = ChaincodeContext(caller=ms, state=self.state, query_mode=WORST_CASE_SCAN)
            matches, scanned = rich_query(
                ctx.state, {"doc_type": "cert", "cert_hash": cert_hex}
            )
            if not matches:
                raise RuntimeError("provisioned verification target missing from state")
            self._scan_memo = scanned
        return self._scan_memo

    def _start_verify(self, request_index: int, target_ms: str, arrived_at: int) -> None:
        self.started += 1
        self.request_events += 1
        record_ms, cert_hex = self.provisioned[request_index % len(self.provisioned)]
        client = _client_host(target_ms)
        peer = _peer_host(target_ms)

        def at_peer():
            done_at = self.queue.clock + self.profile.rest_overhead_us

            def after_rest():
                if self.config.query_mode == WORST_CASE_SCAN:
                    records = self._scan_count_now()
                else:
                    records = 1
                service = round(self.profile.query_per_record_us * records)
                finish = self.query_stations[target_ms].enqueue(self.queue.clock, service)

                def query_done():
                    found = self.state.get(cert_key(record_ms, cert_hex)) is not None
                    if not found:
                        self.errors += 1
                    self._send_query_response(peer, client, arrived_at)

                self.queue.schedule(finish, query_done)

            self.queue.schedule(done_at, after_rest)

        self.net.send(client, peer, self.profile.query_bytes, "query", at_peer)

    def _send_query_response(self, peer: str, client: str, arrived_at: int) -> None:
        def done():
            self.completed += 1
            self.responses_us.append(self.queue.clock - arrived_at)

        self.net.send(peer, client, self.profile.response_bytes, "response", done)

    # ------------------------------------------------------------------
    # execution

    def execute(self) -> LevelMetrics:
        self.preload()
        schedule = generate_arrivals(
            self.level, self.config.duration_seconds, self.config.arrival_mode, self.config.seed
        )
        verify_single = self.config.step == "verify" and self.config.verify_target == "single"
        for index, at in enumerate(schedule.arrivals_us):
            if self.config.step == "register":
                ms = EU_MEMBER_STATES[index % len(EU_MEMBER_STATES)]
                self.queue.schedule(at, lambda i=index, m=ms, t=at: self._start_register(i, m, t))
            else:
                ms = EU_MEMBER_STATES[0] if verify_single else EU_MEMBER_STATES[index % 27]
                self.queue.schedule(at, lambda i=index, m=ms, t=at: self._start_verify(i, m, t))
        self._schedule_ambient()
        self._schedule_faults()
        self._schedule_sampler()
        self.queue.run_until(self.duration_us)
        self.queue.drain()
        return self._metrics(len(schedule))

    def _metrics(self, requests: int) -> LevelMetrics:
        if self.responses_us:
            ordered = sorted(self.responses_us)
            mean_ms = sum(ordered) / len(ordered) / 1000.0
            median_ms = statistics.median(ordered) / 1000.0
            rank = max(0, -(-95 * len(ordered) // 100) - 1)
            p95_ms = ordered[rank] / 1000.0
        else:
            mean_ms = median_ms = p95_ms = 0.0
        peer_kb = max(
            self.meter.host_kb_per_second(_peer_host(ms)) for ms in EU_MEMBER_STATES
        )
        ordering_kb = sum(
            self.meter.host_kb_per_second(host) for host in self.topology.ordering_hosts
        )
        busy = {
            "endorse": max(
                s.busy_fraction(self.duration_us) for s in self.endorse_stations.values()
            ),
            "commit": max(
                s.busy_fraction(self.duration_us) for s in self.commit_stations.values()
            ),
            "query": max(
                s.busy_fraction(self.duration_us) for s in self.query_stations.values()
            ),
            "orderer": self.orderer_station.busy_fraction(self.duration_us),
        }
        saturated = self.errors > 0 or self._backlog_grows()
        return LevelMetrics(
            tps=float(self.level),
            requests=requests,
            mean_response_ms=mean_ms,
            median_response_ms=median_ms,
            p95_response_ms=p95_ms,
            peer_bandwidth_kb=peer_kb,
            ordering_bandwidth_kb=ordering_kb,
            busy_fractions=busy,
            error_count=self.errors,
            saturated=saturated,
            accepted_submissions=self.accepted,
            committed_txs=self.committed,
            block_count=len(self.chain.blocks),
            scan_count=self._scan_memo or 0,
            processed_events=self.queue.processed,
            request_events=self.request_events,
        )

    def _backlog_grows(self) -> bool:
        """Unbounded-queue heuristic: in-flight count over the run's second
        half well above the steady level seen in the second quarter."""
        samples = self.inflight_samples
        if len(samples) < 8:
            return False
        quarter = len(samples) // 4
        early = samples[quarter : 2 * quarter]
        late = samples[3 * quarter :]
        early_mean = sum(early) / len(early)
        late_mean = sum(late) / len(late)
        return late_mean > 2.0 * early_mean + 2.0


def run_level(config: ScenarioConfig, level, tracer: TraceWriter | None = None):
    """Run one TPS level; returns (LevelMetrics, LevelRun) for inspection."""
    run = LevelRun(config, level, tracer)
    metrics = run.execute()
    return metrics, run


def _single_world(config: ScenarioConfig):
    """A fresh one-request world: ledger, centers, cluster, keys."""
    run = LevelRun(config, 1)
    run.preload()
    return run


def single_register_timeline(cert_hash: CertificateHash, ms: str, config: ScenarioConfig):
    """Register one real certificate hash end to end on an idle fresh world.

    With nothing else in flight every station is free, so each hop's time is
    the model's service/transit arithmetic applied directly; the single
    transaction is cut by the batch timer. Returns (timeline, run) where
    timeline is a list of (time_us, label) milestones.
    """
    run = _single_world(config)
    profile, link = config.service_profile, config.link
    from .netsim import transit_delay_us

    t = 0
    timeline = [(t, f"request submitted by client-{ms}")]
    t += transit_delay_us(link, profile.proposal_bytes)
    timeline.append((t, f"proposal received at peer-{ms} (REST interface)"))
    t += profile.rest_overhead_us
    t += profile.endorse_us
    ctx = ChaincodeContext(caller=ms, state=run.state)
    response = register_certificate(ctx, cert_hash, run.center_dids[ms])
    tx = run._build_tx(ms, response)
    timeline.append((t, f"endorsed by peer-{ms}"))
    t += transit_delay_us(link, profile.envelope_bytes)
    timeline.append((t, "envelope received at sequencer-0"))
    t += profile.orderer_per_envelope_us
    t += transit_delay_us(link, profile.envelope_bytes)
    envelope = Envelope(transaction=tx, received_at=t, size_bytes=profile.envelope_bytes)
    result = run.cluster.submit(envelope)
    if not result.accepted:
        timeline.append((t, "ordering cluster unavailable: request failed"))
        return timeline, run
    timeline.append((t, "appended to the replicated log"))
    t += config.batch.batch_timeout_us
    batch = run.cluster.cut_batch(t)
    block = seal_block(batch, run.chain.tip, run.sealer_key)
    run.chain.append_block(block)
    flags = apply_block(run.state, block, run.policy)
    timeline.append((t, f"batch timeout: block {block.number} sealed ({len(batch)} tx)"))
    block_bytes = profile.block_base_bytes + profile.envelope_bytes * len(batch)
    t += transit_delay_us(link, block_bytes)
    timeline.append((t, "block delivered to all 27 peers"))
    t += profile.commit_per_tx_us * len(batch)
    status = "valid" if flags[0].valid else f"invalid ({flags[0].reason})"
    timeline.append((t, f"committed at peer-{ms}: transaction {status}"))
    t += transit_delay_us(link, profile.endorsement_bytes)
    timeline.append((t, f"acknowledgment received by client-{ms}"))
    return timeline, run


def single_verify_timeline(cert_hash: CertificateHash, ms: str, config: ScenarioConfig,
                           anchored: bool = True):
    """Verify one certificate hash on a fresh world, optionally pre-anchoring it."""
    run = _single_world(config)
    profile, link = config.service_profile, config.link
    from .chaincode import verify_certificate
    from .netsim import transit_delay_us

    if anchored:
        ctx = ChaincodeContext(caller=ms, state=run.state)
        response = register_certificate(ctx, cert_hash, run.center_dids[ms])
        run._commit_setup_block([run._build_tx(ms, response)])
    t = 0
    timeline = [(t, f"verification request submitted by client-{ms}")]
    t += transit_delay_us(link, profile.query_bytes)
    timeline.append((t, f"query received at peer-{ms} (REST interface)"))
    t += profile.rest_overhead_us
    ctx = ChaincodeContext(caller=ms, state=run.state, query_mode=config.query_mode)
    result = verify_certificate(ctx, cert_hash, issuer_ms=ms)
    t += round(profile.query_per_record_us * max(1, result.scan_count))
    outcome = "found" if result.found else "not found"
    timeline.append(
        (t, f"content query done: record {outcome} (scanned {result.scan_count} entries)")
    )
    t += transit_delay_us(link, profile.response_bytes)
    timeline.append((t, f"response received by client-{ms}"))
    return timeline, result
