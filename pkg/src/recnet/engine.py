"""The two-stage simulation loop.

Stage one runs per interaction: fuse buffers, predict, reward, assign credit,
optimize client modules. Stage two runs once the pending update set reaches
``update_size``: optimize routers from their aggregated gradients, absorb the
queued attribute diffs, rebuild the routing table and multicast.

Every stage computes on local copies and commits at the end, so a backend
failure leaves the engine exactly as it was before the stage began.
"""

from __future__ import annotations

import hashlib
import json
import logging
from collections import Counter
from dataclasses import dataclass, field, replace
from typing import Any, Callable, Iterable, Mapping, Sequence

import numpy as np

from .backends.base import GradientContext, PromptBackend
from .backends.mock import MockBackend
from .embedding import EmbeddingBackend, cosine, embedder_from_state, make_embedder
from .errors import NoAttributes, PreconditionError, RecNetError, RunAborted
from .model import (
    ClientAgent,
    ClientId,
    FilterMemory,
    InteractionRecord,
    ModuleKind,
    ModuleRef,
    NetworkConfig,
    PropagatedMessage,
    RouterAgent,
    TextualGradient,
)
from .optimization import (
    FeedbackRecord,
    RouterFeedback,
    aggregate_router_gradients,
    apply_router_decision,
    assign_credit,
    compute_reward,
    decide_router_action,
    optimize_client_modules,
)
from .reception import buffer_push, flush_and_merge
from .routing import (
    AttributeDiff,
    build_table,
    init_routers,
    integrate_batch,
    multicast,
    router_message,
    score,
)
from .variants import variant_gate

log = logging.getLogger(__name__)

COLD_THRESHOLD = 1
LAMBDA_PAPER = 1.5
STAGES = ("init", "client", "router")


@dataclass
class EngineState:
    clients: dict[str, ClientAgent]
    routers: list[RouterAgent]
    pending_diffs: list[AttributeDiff] = field(default_factory=list)
    pending_router_gradients: dict[int, list[RouterFeedback]] = field(default_factory=dict)
    pending_records: list[InteractionRecord] = field(default_factory=list)
    batch_index: int = 0
    next_router_id: int = 0
    records_processed: int = 0
    k_trajectory: list[int] = field(default_factory=list)

    def copy(self) -> EngineState:
        return EngineState(
            dict(self.clients),
            list(self.routers),
            list(self.pending_diffs),
            {k: list(v) for k, v in self.pending_router_gradients.items()},
            list(self.pending_records),
            self.batch_index,
            self.next_router_id,
            self.records_processed,
            list(self.k_trajectory),
        )


@dataclass
class CallAccounting:
    """Per-stage prompt counters plus the profile-update-only baseline."""

    stage_calls: dict[str, Counter] = field(default_factory=dict)
    interactions: int = 0
    baseline_calls: int = 0
    deliveries: int = 0
    routers_updated: list[int] = field(default_factory=list)  # per batch

    def stage_total(self, stage: str) -> int:
        return sum(self.stage_calls.get(stage, Counter()).values())

    @property
    def lambda_observed(self) -> float:
        if not self.baseline_calls:
            return 0.0
        return self.stage_total("client") / self.baseline_calls

    def calls_dict(self) -> dict[str, dict[str, int]]:
        return {
            stage: {k: int(v) for k, v in sorted(self.stage_calls[stage].items())}
            for stage in sorted(self.stage_calls)
        }


def _flatten_profiles(clients: Iterable[ClientAgent]) -> list[str]:
    return [c.profile for c in sorted(clients, key=lambda c: c.id.key) if c.profile]


class Engine:
    def __init__(
        self,
        config: NetworkConfig,
        state: EngineState,
        backend: PromptBackend,
        embedder: EmbeddingBackend,
        rng: np.random.Generator | None = None,
    ) -> None:
        self.config = config
        self.state = state
        self.backend = backend
        self.embedder = embedder
        self.rng = rng if rng is not None else np.random.default_rng(config.seed)
        self.accounting = CallAccounting()
        self.delivery_log: list[dict] = []
        self.lineage: list[dict] = []
        self.batch_reports: list[dict] = []
        self.augmented: set[ClientId] = set()
        self._sync_accounting()

    # -- construction ------------------------------------------------------------

    @classmethod
    def from_profiles(
        cls,
        config: NetworkConfig,
        profiles: Mapping[ClientId, str],
        backend: PromptBackend | None = None,
        embedder: EmbeddingBackend | None = None,
        corpus: Iterable[str] | None = None,
    ) -> Engine:
        """Build clients and initial routers.

        ``corpus`` fits the co-occurrence embedder; it defaults to the initial
        profiles themselves.
        """
        backend = backend or MockBackend(config.max_attributes, config.seed)
        clients = {
            cid.key: ClientAgent.create(
                cid,
                text,
                buffer_capacity=config.buffer_capacity,
                max_rules=config.max_rules,
                max_attributes=config.max_attributes,
            )
            for cid, text in sorted(profiles.items())
        }
        if embedder is None:
            docs = list(corpus) if corpus is not None else _flatten_profiles(clients.values())
            embedder = make_embedder(config.embedder, config.embedding_dim, config.seed, docs)
        state = EngineState(clients, [])
        engine = cls(config, state, backend, embedder)
        if engine.gate("routers"):
            with backend.in_stage("init"):
                try:
                    state.routers = init_routers(
                        clients.values(), config.k_init, backend, embedder, config.seed
                    )
                except NoAttributes:
                    log.warning("no client attributes yet; routers will be built at the first router stage")
            state.next_router_id = len(state.routers)
        state.k_trajectory = [len(state.routers)]
        engine._sync_accounting()
        return engine

    def gate(self, feature: str) -> bool:
        return variant_gate(self.config.variant, feature)

    def _sync_accounting(self) -> None:
        self.accounting.stage_calls = {s: Counter(c) for s, c in self.backend.stage_calls.items()}

    def _client(self, clients: Mapping[str, ClientAgent], cid: ClientId) -> ClientAgent:
        found = clients.get(cid.key)
        if found is not None:
            return found
        return ClientAgent.create(
            cid,
            "",
            buffer_capacity=self.config.buffer_capacity,
            max_rules=self.config.max_rules,
            max_attributes=self.config.max_attributes,
        )

    # -- stage one -------------------------------------------------------------------

    def step(self, record: InteractionRecord) -> FeedbackRecord:
        """Client-centric update for one interaction; all-or-nothing."""
        st = self.state
        clients = dict(st.clients)
        u = self._client(clients, record.user)
        p = self._client(clients, record.positive)
        n = self._client(clients, record.negative)
        alive = {r.id for r in st.routers}
        contributing = frozenset(
            m.router_id
            for c in (u, p, n)
            for m in c.buffer.entries
            if isinstance(m.router_id, int) and m.router_id in alive
        )
        use_filter = self.gate("filter")
        new_router_feedback: dict[int, list[RouterFeedback]] = {}
        diffs: list[AttributeDiff] = []
        baseline = 0

        with self.backend.in_stage("client"):
            u_merged, u = flush_and_merge(u, self.backend, force=True, use_filter=use_filter)
            p_merged, p = flush_and_merge(p, self.backend, force=True, use_filter=use_filter)
            n_merged, n = flush_and_merge(n, self.backend, force=True, use_filter=use_filter)
            for c in (u, p, n):
                clients[c.id.key] = c
            outcome = self.backend.predict(u_merged, (p.id, p_merged), (n.id, n_merged))
            baseline += 1
            reward = compute_reward(outcome.chosen, record.positive)

            modules: list[ModuleRef] = []
            if self.gate("fpo"):
                modules.append(ModuleRef.profile(u.id))
                if self.gate("opt_filter"):
                    modules.append(ModuleRef.filter_mem(u.id))
                modules += [ModuleRef.profile(p.id), ModuleRef.profile(n.id)]
                if self.gate("opt_router"):
                    modules += [ModuleRef.of_router(rid) for rid in sorted(contributing)]
            feedback = FeedbackRecord(record, outcome.chosen, reward, tuple(modules), contributing)

            if modules:
                by_router = {r.id: r for r in st.routers}
                contents = {}
                for m in modules:
                    if m.kind is ModuleKind.ROUTER:
                        contents[m] = by_router[m.router].profile
                    elif m.kind is ModuleKind.FILTER_MEM:
                        contents[m] = clients[m.client.key].filter_memory.render()
                    else:
                        contents[m] = clients[m.client.key].profile
                ctx = GradientContext(
                    record, reward, outcome.chosen, u.profile, u_merged, p_merged, n_merged
                )
                grads = assign_credit(feedback, contents, ctx, self.backend)
                baseline += sum(1 for g in grads if g.module_ref.kind is ModuleKind.CLIENT_PROFILE)
                for g in grads:
                    if g.module_ref.kind is ModuleKind.ROUTER:
                        new_router_feedback.setdefault(g.module_ref.router, []).append(
                            RouterFeedback(g, reward, u.id.key)
                        )
                clients, diffs, profile_calls = optimize_client_modules(grads, clients, self.backend)
                baseline += profile_calls

            for cid in (record.user, record.positive):
                c = clients[cid.key]
                clients[cid.key] = replace(c, interaction_count=c.interaction_count + 1)

            deliveries: list[dict] = []
            if self.gate("point_to_point"):
                clients, deliveries = self._p2p_propagate(clients, diffs)
                diffs = []

        # commit
        st.clients = clients
        st.pending_diffs.extend(diffs)
        for rid, fbs in new_router_feedback.items():
            st.pending_router_gradients.setdefault(rid, []).extend(fbs)
        st.pending_records.append(record)
        st.records_processed += 1
        self.delivery_log.extend(deliveries)
        self.accounting.deliveries += len(deliveries)
        self.accounting.interactions += 1
        self.accounting.baseline_calls += baseline
        self._sync_accounting()
        return feedback

    def _neighbors(self, source: ClientAgent, clients: Mapping[str, ClientAgent]) -> list[str]:
        e_src = self.embedder.embed(source.profile)
        scored = []
        for key in sorted(clients):
            if key == source.id.key:
                continue
            s = cosine(e_src, self.embedder.embed(clients[key].profile))
            if s > 0.0:
                scored.append((-s, key))
        scored.sort()
        top_k, top_p = self.config.em_top_k, self.config.em_top_p
        if not self.gate("llm_rerank"):
            return [k for _, k in scored[:top_k]]
        pool = [(k, clients[k].profile) for _, k in scored[:top_p]]
        if not pool:
            return []
        chosen = self.backend.rerank(source.profile, pool, top_k)
        allowed = {k for k, _ in pool}
        return [k for k in chosen if k in allowed][:top_k]

    def _p2p_propagate(
        self, clients: dict[str, ClientAgent], diffs: Sequence[AttributeDiff]
    ) -> tuple[dict[str, ClientAgent], list[dict]]:
        """Send each updated client's profile straight to its nearest clients."""
        deliveries = []
        batch = self.state.batch_index
        for diff in diffs:
            source = clients[diff.client.key]
            content = source.profile
            if self.gate("llm_summarize"):
                content = self.backend.summarize("", source.attributes)
            for key in self._neighbors(source, clients):
                text = content
                if self.gate("per_neighbor_content"):
                    text = self.backend.summarize(clients[key].profile, source.attributes)
                msg = PropagatedMessage(source.id.key, text, source.attributes)
                clients[key] = self._deliver(clients[key], msg)
                deliveries.append({"batch": batch, "router": source.id.key, "client": key, "score": None})
        return clients, deliveries

    def _deliver(self, client: ClientAgent, msg: PropagatedMessage) -> ClientAgent:
        if self.gate("buffer"):
            return replace(client, buffer=buffer_push(client.buffer, msg))
        # Direct fuse: integrate on arrival, no buffer and (without PPR) no filter.
        filt = client.filter_memory if self.gate("filter") else FilterMemory(max_rules=client.filter_memory.max_rules)
        fused = self.backend.merge((msg,), filt, client.profile)
        attrs = frozenset(self.backend.extract(fused)) if fused != client.profile else client.attributes
        return replace(client, profile=fused, attributes=attrs)

    # -- stage two ---------------------------------------------------------------------

    def pending_size(self) -> int:
        return len(self.state.pending_records)

    def maybe_run_router_stage(self, force: bool = False) -> dict | None:
        st = self.state
        if not st.pending_records and not st.pending_diffs and not st.pending_router_gradients:
            return None
        threshold = self.config.update_size if self.gate("async") else 1
        if not force and len(st.pending_records) < threshold:
            return None
        return self._router_stage()

    def _router_stage(self) -> dict:
        st = self.state
        batch = st.batch_index
        before = sum(self.backend.stage_calls.get("router", Counter()).values())
        routers = list(st.routers)
        clients = dict(st.clients)
        next_id = st.next_router_id
        lineage: list[dict] = []
        changed: set[int] = set()
        decisions: list[dict] = []
        deliveries: list[dict] = []
        touched: list[int] = []

        if self.gate("routers"):
            with self.backend.in_stage("router"):
                if not routers and st.pending_diffs:
                    try:
                        routers = init_routers(
                            clients.values(), self.config.k_init, self.backend, self.embedder, self.config.seed
                        )
                        next_id = len(routers)
                    except NoAttributes:
                        pass
                if self.gate("opt_router"):
                    for rid in sorted(st.pending_router_gradients):
                        current = {r.id: r for r in routers}
                        if rid not in current:
                            continue  # retired earlier in this stage
                        aggregated = aggregate_router_gradients(current[rid], st.pending_router_gradients[rid])
                        decision = decide_router_action(
                            current[rid], aggregated, routers, self.config, self.backend
                        )
                        out = apply_router_decision(
                            routers,
                            rid,
                            decision,
                            self.backend,
                            self.embedder,
                            self.config.seed + batch,
                            next_id,
                            aggregated,
                        )
                        routers, next_id = out.routers, out.next_id
                        decisions.append({"router": rid, "decided": decision.action.value, "applied": out.action})
                        if out.action == "noop":
                            continue
                        changed.update(out.children)
                        changed.difference_update(out.retired)
                        lineage.append(
                            {
                                "batch": batch,
                                "router": rid,
                                "action": out.action,
                                "children": list(out.children),
                                "k_after": len(routers),
                            }
                        )
                if routers:
                    routers, touched = integrate_batch(st.pending_diffs, routers, self.backend, self.embedder)
                alive = {r.id for r in routers}
                updated = sorted((set(touched) | changed) & alive)
                upd_routers = [r for r in routers if r.id in updated]
                table = build_table(upd_routers, clients, self.embedder, self.config.tau, batch)
                if self.gate("buffer"):
                    clients, deliveries = multicast(updated, routers, clients, table, self.config.tau)
                else:
                    by_id = {r.id: r for r in routers}
                    for rid, key, s in table.above():
                        clients[key] = self._deliver(clients[key], router_message(by_id[rid]))
                        deliveries.append({"batch": batch, "router": rid, "client": key, "score": s})

        after = sum(self.backend.stage_calls.get("router", Counter()).values())
        report = {
            "batch": batch,
            "records": len(st.pending_records),
            "diffs": len(st.pending_diffs),
            "touched": touched,
            "updated_routers": sorted((set(touched) | changed) & {r.id for r in routers}),
            "decisions": decisions,
            "deliveries": len(deliveries),
            "router_calls": after - before,
            "k_after": len(routers),
        }
        # commit
        st.routers = routers
        st.clients = clients
        st.next_router_id = next_id
        st.pending_diffs = []
        st.pending_router_gradients = {}
        st.pending_records = []
        st.batch_index += 1
        st.k_trajectory.append(len(routers))
        self.lineage.extend(lineage)
        self.delivery_log.extend(deliveries)
        self.accounting.deliveries += len(deliveries)
        self.batch_reports.append(report)
        self.accounting.routers_updated.append(len(report["updated_routers"]))
        self._sync_accounting()
        return report

    # -- driving ---------------------------------------------------------------------------

    def run(
        self,
        records: Iterable[InteractionRecord],
        snapshot_hook: Callable[[int, dict], None] | None = None,
    ) -> dict:
        """Process ``records`` in order; fail fast with the last consistent snapshot."""
        every = self.config.snapshot_every

        def stage(force: bool) -> None:
            report = self.maybe_run_router_stage(force=force)
            if report is not None and snapshot_hook and every and self.state.batch_index % every == 0:
                snapshot_hook(self.state.batch_index, self.snapshot())

        try:
            for record in records:
                self.step(record)
                stage(False)
            stage(True)
        except RecNetError as exc:
            raise RunAborted(f"run aborted: {exc}", self.snapshot(), exc) from exc
        return self.report()

    def report(self) -> dict:
        return {
            "variant": self.config.variant,
            "seed": self.config.seed,
            "interactions": self.accounting.interactions,
            "batches": self.state.batch_index,
            "calls": self.accounting.calls_dict(),
            "k_trajectory": list(self.state.k_trajectory),
            "baseline_calls": self.accounting.baseline_calls,
            "lambda_observed": round(self.accounting.lambda_observed, 12),
            "lambda_paper": LAMBDA_PAPER,
            "lineage_events": len(self.lineage),
            "deliveries": self.accounting.deliveries,
            "state_digest": self.state_digest(),
        }

    def state_fingerprint(self) -> str:
        """Canonical JSON of clients, routers and pending work (no counters)."""
        snap = self.snapshot()
        keep = ("clients", "routers", "pending_diffs", "pending_router_gradients", "pending_records",
                "batch_index", "next_router_id", "records_processed", "k_trajectory")
        return json.dumps({k: snap[k] for k in keep}, sort_keys=True)

    def state_digest(self) -> str:
        return hashlib.sha256(self.state_fingerprint().encode()).hexdigest()

    # -- cold start ----------------------------------------------------------------------------

    def augment_cold_start(self, cid: ClientId) -> str:
        """Connect a cold client to every router above tau and fuse at once."""
        client = self.state.clients.get(cid.key)
        if client is None:
            raise PreconditionError(f"unknown client {cid}")
        if client.interaction_count > COLD_THRESHOLD:
            raise PreconditionError(
                f"{cid} has {client.interaction_count} interactions; augmentation is for cold clients"
            )
        with self.backend.in_stage("client"):
            for r in self.state.routers:
                if score(r, replace(client, interaction_count=0), self.embedder) > self.config.tau:
                    client = replace(client, buffer=buffer_push(client.buffer, router_message(r)))
            merged, client = flush_and_merge(client, self.backend, use_filter=self.gate("filter"))
            if merged != client.profile:
                client = replace(client, profile=merged, attributes=frozenset(self.backend.extract(merged)))
        self.state.clients = {**self.state.clients, cid.key: client}
        self.augmented.add(cid)
        self._sync_accounting()
        return merged

    def merged_profile(self, cid: ClientId, stage: str = "client") -> str:
        """Flush a client's buffer into its view without an interaction."""
        client = self._client(self.state.clients, cid)
        with self.backend.in_stage(stage):
            merged, client = flush_and_merge(client, self.backend, use_filter=self.gate("filter"))
        self.state.clients = {**self.state.clients, cid.key: client}
        self._sync_accounting()
        return merged

    def sample_negative(self, user: ClientId, history: set[str], items: Sequence[str]) -> ClientId:
        pool = [i for i in items if i not in history]
        if not pool:
            raise PreconditionError(f"no item outside the history of {user}")
        return ClientId.item(pool[int(self.rng.integers(len(pool)))])

    # -- snapshots -------------------------------------------------------------------------------

    def snapshot(self) -> dict[str, Any]:
        st = self.state
        return {
            "config": self.config.to_dict(),
            "clients": [st.clients[k].to_dict() for k in sorted(st.clients)],
            "routers": [r.to_dict() for r in st.routers],
            "pending_diffs": [d.to_dict() for d in st.pending_diffs],
            "pending_router_gradients": {
                str(rid): [
                    {"gradient": fb.gradient.to_dict(), "reward": fb.reward, "client": fb.client}
                    for fb in fbs
                ]
                for rid, fbs in sorted(st.pending_router_gradients.items())
            },
            "pending_records": [r.to_dict() for r in st.pending_records],
            "batch_index": st.batch_index,
            "next_router_id": st.next_router_id,
            "records_processed": st.records_processed,
            "k_trajectory": list(st.k_trajectory),
            "rng": self.rng.bit_generator.state,
            "embedder": self.embedder.state(),
            "accounting": {
                "calls": self.accounting.calls_dict(),
                "interactions": self.accounting.interactions,
                "baseline_calls": self.accounting.baseline_calls,
                "deliveries": self.accounting.deliveries,
                "routers_updated": list(self.accounting.routers_updated),
            },
            "lineage": list(self.lineage),
        }

    @classmethod
    def from_snapshot(
        cls,
        snap: Mapping[str, Any],
        backend: PromptBackend | None = None,
        embedder: EmbeddingBackend | None = None,
    ) -> Engine:
        config = NetworkConfig.from_dict(snap["config"])
        backend = backend or MockBackend(config.max_attributes, config.seed)
        embedder = embedder or embedder_from_state(snap["embedder"])
        state = EngineState(
            clients={
                ClientId.from_dict(c["id"]).key: ClientAgent.from_dict(c) for c in snap["clients"]
            },
            routers=[RouterAgent.from_dict(r) for r in snap["routers"]],
            pending_diffs=[AttributeDiff.from_dict(d) for d in snap["pending_diffs"]],
            pending_router_gradients={
                int(rid): [
                    RouterFeedback(TextualGradient.from_dict(fb["gradient"]), fb["reward"], fb["client"])
                    for fb in fbs
                ]
                for rid, fbs in snap["pending_router_gradients"].items()
            },
            pending_records=[InteractionRecord.from_dict(r) for r in snap["pending_records"]],
            batch_index=snap["batch_index"],
            next_router_id=snap["next_router_id"],
            records_processed=snap["records_processed"],
            k_trajectory=list(snap["k_trajectory"]),
        )
        rng = np.random.default_rng()
        rng.bit_generator.state = snap["rng"]
        acc = snap["accounting"]
        backend.reset_counters()
        for stage, kinds in acc["calls"].items():
            for kind, count in kinds.items():
                backend.stage_calls[stage][kind] += count
                backend.calls[kind] += count
        engine = cls(config, state, backend, embedder, rng)
        engine.accounting.interactions = acc["interactions"]
        engine.accounting.baseline_calls = acc["baseline_calls"]
        engine.accounting.deliveries = acc.get("deliveries", 0)
        engine.accounting.routers_updated = list(acc["routers_updated"])
        engine.lineage = list(snap.get("lineage", []))
        return engine
