"""JSON-over-HTTP API powering the annotation console.

Every mutation flows through the single-writer store and supports optimistic
concurrency (an ``expected_version`` token; stale tokens get 409) and
idempotent retries (a client-supplied ``request_id`` replays the recorded
response). Round operations (cluster/augment/reassign) additionally take an
exclusive round lock, so two in-flight reassignments conflict instead of
interleaving.

Validation failures come back as structured errors:
``{"code", "message", "offending_ids"}``.
"""

from __future__ import annotations

import threading
from typing import Any, Optional

from fastapi import Depends, FastAPI, HTTPException, Query, Request
from fastapi.responses import JSONResponse
from pydantic import BaseModel, Field

from . import discovery, metrics, schema, verification
from .config import Config
from .discovery import DiscoveryError
from .export import export_graph, stage_accounting
from .metrics import MetricError
from .schema import HumanJudgment
from .store import InvariantError, ProjectStore
from .verification import AgentBundle


class ApiError(HTTPException):
    def __init__(self, status_code: int, code: str, message: str, offending_ids: Optional[list[str]] = None):
        super().__init__(
            status_code=status_code,
            detail={"code": code, "message": message, "offending_ids": offending_ids or []},
        )


class MutationBody(BaseModel):
    expected_version: Optional[int] = None
    request_id: Optional[str] = None


class ConceptBody(MutationBody):
    id: Optional[str] = None
    name: str
    description: str = ""
    settings: list[str] = Field(default_factory=list)
    violation_sketch: str = ""
    actor_roles: str = ""
    recipient_roles: str = ""
    seed_ids: list[str]
    annotator: str = ""


class MarksBody(MutationBody):
    good: list[str] = Field(default_factory=list)
    bad: list[str] = Field(default_factory=list)
    annotator: str = ""


class RoundNextBody(MutationBody):
    k: Optional[int] = None
    seed: Optional[int] = None


class AugmentBody(MutationBody):
    tau: Optional[float] = None


class ReassignBody(MutationBody):
    tau: Optional[float] = None
    lam: Optional[float] = Field(default=None, alias="lambda")

    model_config = {"populate_by_name": True}


class JudgmentBody(MutationBody):
    judgments: list[dict[str, Any]]


class VerifyBody(MutationBody):
    aspect: str
    mode: str = "agents"  # "self" | "agents"
    threshold: Optional[float] = None
    limit: Optional[int] = None


def create_app(
    store: ProjectStore,
    config: Optional[Config] = None,
    chat_provider=None,
    agent_bundle: Optional[AgentBundle] = None,
    auth_token: Optional[str] = None,
) -> FastAPI:
    config = config or Config()
    app = FastAPI(title="convnorms annotation service")
    round_lock = threading.Lock()
    replayed: dict[str, Any] = {}  # request_id -> recorded response body

    def require_auth(request: Request) -> str:
        """Single bearer token with the annotator id embedded before the
        first colon. No token configured means auth is off (local use)."""
        if auth_token is None:
            return "anonymous"
        header = request.headers.get("authorization", "")
        if header != f"Bearer {auth_token}":
            raise ApiError(401, "unauthorized", "missing or invalid bearer token")
        return auth_token.split(":", 1)[0]

    def check_version(body: MutationBody) -> None:
        if body.expected_version is not None and body.expected_version != store.version:
            raise ApiError(
                409,
                "stale_version",
                f"expected version {body.expected_version}, store is at {store.version}",
            )

    def idempotent(body: MutationBody, run) -> Any:
        if body.request_id is not None and body.request_id in replayed:
            return replayed[body.request_id]
        check_version(body)
        try:
            result = run()
        except InvariantError as exc:
            raise ApiError(422, exc.rule, str(exc))
        except DiscoveryError as exc:
            raise ApiError(422, "precondition_failed", str(exc))
        except ValueError as exc:
            raise ApiError(422, "invalid_value", str(exc))
        result["version"] = store.version
        if body.request_id is not None:
            replayed[body.request_id] = result
        return result

    def with_round_lock(body: MutationBody, run) -> Any:
        if not round_lock.acquire(blocking=False):
            raise ApiError(409, "round_in_progress", "another round operation is in flight")
        try:
            return idempotent(body, run)
        finally:
            round_lock.release()

    def description_brief(did: str) -> dict:
        desc = store.state.descriptions.get(did)
        if desc is None:
            return {"id": did}
        current = store.state.active_assignment(did)
        return {
            "id": did,
            "title": desc.title,
            "body": desc.body,
            "kind": desc.kind,
            "status": desc.status,
            "conversation_id": desc.conversation_id,
            "assigned_concept_id": current.concept_id if current else None,
            "score": current.score if current else None,
        }

    # -- read endpoints --

    @app.get("/state")
    def get_state(annotator: str = Depends(require_auth)) -> dict:
        return {"version": store.version, "state": store.state.to_dict()}

    @app.get("/progress")
    def get_progress(annotator: str = Depends(require_auth)) -> dict:
        stats = discovery.coverage_stats(store.state)
        per_concept = {}
        for concept in store.state.concept_order():
            assigned = sum(
                1
                for a in store.state.active_assignments().values()
                if a.concept_id == concept.id
            )
            per_concept[concept.id] = {"name": concept.name, "assigned": assigned}
        return {
            "version": store.version,
            "coverage": stats.to_dict(),
            "per_concept": per_concept,
            "round": store.state.round,
            "flagged": store.state.flagged_for_review(),
        }

    @app.get("/clusters")
    def get_clusters(
        round: Optional[int] = Query(default=None),
        annotator: str = Depends(require_auth),
    ) -> dict:
        r = round if round is not None else store.state.round
        views = store.state.clusters.get(r, [])
        clusters = []
        for view in views:
            clusters.append(
                {
                    "cluster_id": view["cluster_id"],
                    "iteration": view["iteration"],
                    "size": len(view["member_ids"]),
                    "member_ids": view["member_ids"],
                    "exemplars": [description_brief(d) for d in view["exemplar_ids"]],
                }
            )
        return {"version": store.version, "round": r, "clusters": clusters}

    @app.get("/clusters/{cluster_id}/samples")
    def get_cluster_samples(
        cluster_id: str,
        n: int = Query(default=10, ge=1),
        annotator: str = Depends(require_auth),
    ) -> dict:
        for views in store.state.clusters.values():
            for view in views:
                if view["cluster_id"] == cluster_id:
                    members = view["member_ids"][:n]  # stored nearest-to-centroid first
                    return {
                        "version": store.version,
                        "cluster_id": cluster_id,
                        "samples": [description_brief(d) for d in members],
                    }
        raise ApiError(404, "unknown_cluster", cluster_id, [cluster_id])

    @app.get("/concepts")
    def get_concepts(annotator: str = Depends(require_auth)) -> dict:
        out = []
        for concept in store.state.concept_order():
            assigned = [
                did
                for did, a in store.state.active_assignments().items()
                if a.concept_id == concept.id
            ]
            out.append({**concept.to_dict(), "assigned_ids": sorted(assigned)})
        return {"version": store.version, "concepts": out}

    @app.get("/descriptions/{description_id}")
    def get_description(description_id: str, annotator: str = Depends(require_auth)) -> dict:
        desc = store.state.descriptions.get(description_id)
        if desc is None:
            raise ApiError(404, "unknown_description", description_id, [description_id])
        conv = store.state.conversations.get(desc.conversation_id)
        return {
            "version": store.version,
            "description": description_brief(description_id),
            "conversation": conv.to_dict() if conv else None,
        }

    # -- mutations --

    @app.post("/concepts")
    def post_concepts(body: ConceptBody, annotator: str = Depends(require_auth)) -> dict:
        def run() -> dict:
            concept = discovery.create_concept(
                store,
                name=body.name,
                description=body.description,
                settings=body.settings,
                violation_sketch=body.violation_sketch,
                actor_roles=body.actor_roles,
                recipient_roles=body.recipient_roles,
                seed_ids=body.seed_ids,
                annotator=body.annotator or annotator,
                concept_id=body.id,
            )
            return {"concept": concept.to_dict()}

        return idempotent(body, run)

    @app.post("/concepts/{concept_id}/marks")
    def post_marks(concept_id: str, body: MarksBody, annotator: str = Depends(require_auth)) -> dict:
        def run() -> dict:
            warnings = discovery.record_marks(
                store, concept_id, body.good, body.bad, annotator=body.annotator or annotator
            )
            return {"warnings": warnings}

        return idempotent(body, run)

    @app.post("/rounds/next")
    def post_round_next(body: RoundNextBody, annotator: str = Depends(require_auth)) -> dict:
        def run() -> dict:
            views, warnings = discovery.next_round(
                store,
                k=body.k if body.k is not None else config.k,
                seed=body.seed if body.seed is not None else config.seed,
                max_iters=config.max_iters,
            )
            return {
                "round": store.state.round,
                "clusters": [v.to_dict() for v in views],
                "warnings": warnings,
            }

        return with_round_lock(body, run)

    @app.post("/rounds/augment")
    def post_augment(body: AugmentBody, annotator: str = Depends(require_auth)) -> dict:
        def run() -> dict:
            tau = body.tau if body.tau is not None else config.tau
            assigned = discovery.knn_augment(store, tau=tau)
            return {"assigned": assigned, "tau": tau}

        return with_round_lock(body, run)

    @app.post("/rounds/reassign")
    def post_reassign(body: ReassignBody, annotator: str = Depends(require_auth)) -> dict:
        def run() -> dict:
            tau = body.tau if body.tau is not None else config.tau
            lam = body.lam if body.lam is not None else config.lam
            applied = discovery.reassign_with_good_bad(store, tau=tau, lam=lam)
            return {"applied": applied, "tau": tau, "lambda": lam}

        return with_round_lock(body, run)

    @app.post("/judgments")
    def post_judgments(body: JudgmentBody, annotator: str = Depends(require_auth)) -> dict:
        def run() -> dict:
            count = 0
            for raw in body.judgments:
                raw = dict(raw)
                raw.setdefault("annotator_id", annotator)
                judgment = HumanJudgment.from_dict(raw)
                store.append("judgment_recorded", {"judgment": judgment.to_dict()})
                count += 1
            return {"recorded": count}

        return idempotent(body, run)

    @app.post("/verify")
    def post_verify(body: VerifyBody, annotator: str = Depends(require_auth)) -> dict:
        if body.aspect not in schema.ASPECTS:
            raise ApiError(422, "unknown_aspect", body.aspect, [body.aspect])

        def run() -> dict:
            threshold = body.threshold if body.threshold is not None else config.threshold
            if body.mode == "self":
                provider = chat_provider or config.build_chat_provider()
                verdicts = verification.run_self_verification(
                    store, body.aspect, provider, limit=body.limit
                )
            elif body.mode == "agents":
                bundle = agent_bundle or AgentBundle.single(
                    chat_provider or config.build_chat_provider()
                )
                verdicts = verification.run_multiagent_verification(
                    store, body.aspect, bundle, threshold=threshold, limit=body.limit
                )
            else:
                raise ValueError(f"unknown verify mode {body.mode!r}")
            return {
                "verdicts": [v.to_dict() for v in verdicts],
                "retained": sum(1 for v in verdicts if v.decision == "retain"),
                "discarded": sum(1 for v in verdicts if v.decision == "discard"),
            }

        return idempotent(body, run)

    # -- reports --

    @app.get("/reports/quality")
    def report_quality(
        aspect: str,
        workflow: str = "multiagent",
        annotator: str = Depends(require_auth),
    ) -> dict:
        original, retained = [], []
        for key, verdict in store.state.verdicts.items():
            if verdict["aspect"] != aspect or verdict["workflow"] != workflow:
                continue
            original.append(verdict["target_id"])
            if verdict["decision"] == "retain":
                retained.append(verdict["target_id"])
        judgments = [j for j in store.state.judgments if j.aspect == aspect]
        if not original:
            raise ApiError(404, "no_verdicts", f"no {workflow} verdicts for {aspect}")
        try:
            qr = metrics.quality_retention(original, retained, judgments)
        except (MetricError, ValueError) as exc:
            raise ApiError(422, "metric_error", str(exc))
        return {"version": store.version, "aspect": aspect, "workflow": workflow, **qr.to_dict()}

    @app.get("/reports/agreement")
    def report_agreement(aspect: str, annotator: str = Depends(require_auth)) -> dict:
        try:
            result = metrics.krippendorff_alpha(store.state.judgments, aspect)
        except MetricError as exc:
            raise ApiError(422, "metric_error", str(exc))
        return {"version": store.version, "aspect": aspect, **result.to_dict()}

    @app.get("/reports/distribution")
    def report_distribution(annotator: str = Depends(require_auth)) -> dict:
        table = metrics.concept_field_distribution(store.state)
        return {
            "version": store.version,
            "table": table,
            "rows": metrics.distribution_rows(table),
        }

    @app.get("/reports/stages")
    def report_stages(annotator: str = Depends(require_auth)) -> dict:
        return {"version": store.version, "report": stage_accounting(store.state)}

    @app.get("/reports/likert")
    def report_likert(annotator: str = Depends(require_auth)) -> dict:
        try:
            result = metrics.likert_mean(store.state.judgments)
        except MetricError as exc:
            raise ApiError(422, "metric_error", str(exc))
        return {"version": store.version, **result.to_dict()}

    @app.get("/export/graph")
    def export_graph_endpoint(annotator: str = Depends(require_auth)) -> dict:
        return {"version": store.version, "records": export_graph(store.state)}

    @app.exception_handler(ApiError)
    async def api_error_handler(request: Request, exc: ApiError):
        return JSONResponse(status_code=exc.status_code, content=exc.detail)

    return app
