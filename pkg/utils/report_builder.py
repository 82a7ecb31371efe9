"""
ReportBuilder — Plain-text summaries of game reports, budgets, certificates and
verification suites for the console.
"""

from __future__ import annotations

from typing import Any, Dict, Iterable


class ReportBuilder:
    """Helper class for rendering console summaries."""

    # Outcome markers
    MARK_SOUND = "✅"
    MARK_HIDDEN = "🔒"
    MARK_DEFEATED = "⚠️"
    MARK_FAIL = "❌"

    OUTCOME_MARKS = {
        "learner_sound": MARK_SOUND,
        "indistinguishable": MARK_HIDDEN,
        "adversary_defeated": MARK_DEFEATED,
        "learner_unsound": MARK_FAIL,
    }

    @staticmethod
    def _rule(title: str) -> str:
        return f"── {title} " + "─" * max(4, 48 - len(title))

    @staticmethod
    def game_report(report: Dict[str, Any]) -> str:
        """Summary of a GameReport dict."""
        config = report.get("config", {})
        outcome = report.get("outcome", "?")
        mark = ReportBuilder.OUTCOME_MARKS.get(outcome, "•")
        lines = [
            ReportBuilder._rule("Game"),
            f"{mark} outcome: {outcome}",
            f"   d={config.get('d')}  K={config.get('K')}  gamma={config.get('gamma')}  "
            f"problem={config.get('problem')}",
            f"   learner={config.get('learner_kind')}  adversary={config.get('adversary_mode')}  "
            f"seed={config.get('seed')}",
            f"   queries: {report.get('n_total')}",
        ]
        if report.get("q_gap") is not None:
            lines.append(f"   q_gap: {report['q_gap']:.6f}")
        if report.get("max_error") is not None:
            lines.append(f"   max_error: {report['max_error']:.3e}")
        if report.get("suboptimality") is not None:
            lines.append(f"   suboptimality: {report['suboptimality']:.6f}")
        budget = report.get("budget")
        if budget:
            lines.append(f"   W={budget['W']:.6f}  d+={budget['d_plus']}  case={budget.get('case')}")
        timings = report.get("timings") or {}
        if "total" in timings:
            lines.append(f"   time: {timings['total']:.3f}s")
        return "\n".join(lines)

    @staticmethod
    def budget(report: Dict[str, Any]) -> str:
        lines = [
            ReportBuilder._rule("Budget"),
            f"d={report['d']}  d+={report['d_plus']}  K={report['K']}  gamma={report['gamma']}  "
            f"g={report['g']:.6f}",
            f"W = {report['W']:.12g}",
        ]
        for k, cap in enumerate(report["per_round_caps"], 1):
            lines.append(f"   n_{k} cap: {cap:.12g}")
        if report.get("n") is not None:
            lines.append(f"n={report['n']}  case={report['case']}  k_threshold={report['k_threshold']}")
        return "\n".join(lines)

    @staticmethod
    def certificate(cert: Dict[str, Any]) -> str:
        ok = cert.get("replay_match") and cert.get("sign_blind", True)
        mark = ReportBuilder.MARK_SOUND if ok else ReportBuilder.MARK_FAIL
        lines = [
            ReportBuilder._rule("Certificate"),
            f"{mark} replay_match={cert.get('replay_match')}  sign_blind={cert.get('sign_blind')}",
            f"   q_gap={cert.get('q_gap')}  rounds={cert.get('rounds')}  queries={cert.get('n_total')}",
        ]
        if cert.get("value_gap") is not None:
            lines.append(f"   value_gap={cert['value_gap']:.9f}")
        for c in cert.get("commitments", []):
            lines.append(
                f"   round {c['round']}: dim {c['dim']} via {c['method']} ({c['guarantee']}), "
                f"{c['examined']} candidates"
            )
        return "\n".join(lines)

    @staticmethod
    def verify(checks: Iterable[Dict[str, Any]]) -> str:
        lines = [ReportBuilder._rule("Verify")]
        for check in checks:
            mark = ReportBuilder.MARK_SOUND if check["passed"] else ReportBuilder.MARK_FAIL
            detail = f" ({check['detail']})" if check.get("detail") else ""
            lines.append(f"{mark} {check['name']}: {check['count']} cases{detail}")
        return "\n".join(lines)
