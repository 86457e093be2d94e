"""The agent loop.

An episode is a sequence of attempts. Each attempt runs up to ``max_steps``
policy steps, the last of which is forced to be an answer. Every answer goes
to the validator; a rejection is written to the notepad and the next attempt
starts from the current browser state with the full memory.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field, replace
from datetime import datetime
from typing import Callable

from .core import (
    AgentMemory,
    Answer,
    Attempt,
    EpisodeTrace,
    Step,
    Task,
    Verdict,
    Wait,
    append_step,
    needs_target,
    utcnow,
    with_resolved,
)
from .env import EnvError, Environment, NavigationTimeout
from .gateway import ModelClient, UsageLedger
from .images import ImageStore
from .localizer import LocalizeError, LocalizerConfig, locate
from .policy import PolicyConfig, PolicyError, PolicyOutput, propose, window_payloads
from .validator import ValidatorConfig, feedback_note, validate

log = logging.getLogger(__name__)

FORCED_FALLBACK_ANSWER = "No answer could be produced within the step budget."
POLICY_FALLBACK_THOUGHT = "The policy output could not be parsed; waiting."


@dataclass(frozen=True)
class RunConfig:
    max_steps: int = 30
    max_attempts: int = 10
    cost_budget_usd: float | None = None
    time_budget_s: float | None = None
    reset_between_attempts: bool = False

    def __post_init__(self) -> None:
        if self.max_steps < 1 or self.max_attempts < 1:
            raise ValueError("max_steps and max_attempts must be >= 1")


@dataclass
class Modules:
    """Everything one episode needs. The environment and ledger are per-episode."""

    env: Environment
    policy_client: ModelClient
    localizer_client: ModelClient
    validator_client: ModelClient
    policy: PolicyConfig = field(default_factory=PolicyConfig)
    localizer: LocalizerConfig = field(default_factory=LocalizerConfig)
    validator: ValidatorConfig = field(default_factory=ValidatorConfig)
    images: ImageStore = field(default_factory=ImageStore)
    ledger: UsageLedger = field(default_factory=UsageLedger)
    clock: Callable[[], datetime] = utcnow

    def __post_init__(self) -> None:
        # Configs name the model they expect; the bound client is authoritative.
        self.policy = replace(self.policy, model_id=self.policy_client.model_id)
        self.localizer = replace(self.localizer, model_id=self.localizer_client.model_id)
        self.validator = replace(self.validator, model_id=self.validator_client.model_id)


@dataclass
class AttemptOutcome:
    answer: str
    steps: list[Step]
    memory: AgentMemory
    aborted: str | None = None
    out_of_budget: bool = False


@dataclass
class EpisodeResult:
    answer: str
    validated: bool
    attempts_used: int
    steps_total: int
    trace: EpisodeTrace
    cost_usd: float
    budget_exceeded: bool = False
    error: str | None = None


class _Budget:
    def __init__(self, config: RunConfig, ledger: UsageLedger) -> None:
        self.config = config
        self.ledger = ledger
        self.started = time.monotonic()

    def exceeded(self) -> bool:
        cfg = self.config
        if cfg.cost_budget_usd is not None and self.ledger.agent_cost() > cfg.cost_budget_usd:
            return True
        return cfg.time_budget_s is not None and time.monotonic() - self.started > cfg.time_budget_s


def _decide(memory: AgentMemory, forced: bool, modules: Modules) -> PolicyOutput:
    config = replace(modules.policy, forced_answer_mode=forced)
    try:
        return propose(memory, config, modules.policy_client, modules.images, modules.ledger)
    except PolicyError as exc:
        log.warning("policy failed at step %d: %s (last output %r)", memory.next_index, exc, exc.last_text[:120])
        if forced:
            return PolicyOutput(POLICY_FALLBACK_THOUGHT, Answer(FORCED_FALLBACK_ANSWER))
        return PolicyOutput(POLICY_FALLBACK_THOUGHT, Wait())


def run_attempt(
    memory: AgentMemory,
    config: RunConfig,
    modules: Modules,
    budget: _Budget | None = None,
) -> AttemptOutcome:
    """Run one attempt from ``memory`` until the policy answers.

    The step at index ``max_steps - 1`` is proposed in forced-answer mode, so
    an attempt never exceeds the step budget.
    """
    steps: list[Step] = []
    for t in range(config.max_steps):
        if budget is not None and budget.exceeded():
            return AttemptOutcome("", steps, memory, out_of_budget=True)
        shot = memory.current_screenshot
        decision = _decide(memory, t == config.max_steps - 1, modules)
        action = decision.action
        if needs_target(action):
            try:
                found = locate(
                    modules.images.get(shot), action.target, modules.localizer_client, modules.localizer, modules.ledger
                )
                action = with_resolved(action, found.point)
            except LocalizeError as exc:
                log.warning("localizer failed at step %d: %s; waiting instead", t, exc)
                action = Wait()

        aborted = None
        try:
            obs = modules.env.execute(action)
            next_shot = modules.images.add(obs.screenshot)
        except NavigationTimeout as exc:
            log.info("navigation timeout at step %d: %s", t, exc)
            try:
                next_shot = modules.images.add(modules.env.screenshot())
            except EnvError as dead:
                aborted, next_shot = str(dead), shot
        except EnvError as exc:
            aborted, next_shot = str(exc), shot

        step = Step(
            index=t,
            thought=decision.thought,
            notes=decision.notes,
            action=action,
            screenshot_ref=shot,
            timestamp=modules.clock(),
        )
        memory = append_step(memory, step).with_screenshot(next_shot)
        steps.append(step)
        if aborted is not None:
            log.error("environment failure at step %d: %s", t, aborted)
            return AttemptOutcome(f"[attempt aborted: {aborted}]", steps, memory, aborted=aborted)
        if isinstance(action, Answer):
            return AttemptOutcome(action.text, steps, memory)
    raise AssertionError("unreachable: the last step is always an answer")  # pragma: no cover


def _failed(task: Task, error: str, ledger: UsageLedger) -> EpisodeResult:
    cost = ledger.agent_cost()
    trace = EpisodeTrace(task=task, final_answer="", cost_usd=cost, ledger_ref=ledger.id, error=error)
    return EpisodeResult("", False, 0, 0, trace, cost, error=error)


def run_episode(task: Task, config: RunConfig, modules: Modules) -> EpisodeResult:
    ledger, images = modules.ledger, modules.images
    try:
        obs = modules.env.open(task.website)
    except (EnvError, NavigationTimeout, OSError) as exc:
        return _failed(task, f"could not load {task.website}: {exc}", ledger)

    budget = _Budget(config, ledger)
    memory = AgentMemory(task=task, current_screenshot=images.add(obs.screenshot))
    attempts: list[Attempt] = []
    answer, validated, over_budget, error = "", False, False, None

    for number in range(1, config.max_attempts + 1):
        if number > 1 and config.reset_between_attempts:
            try:
                memory = memory.with_screenshot(images.add(modules.env.open(task.website).screenshot))
            except (EnvError, NavigationTimeout) as exc:
                error = f"could not reload {task.website}: {exc}"
                break
        outcome = run_attempt(memory, config, modules, budget)
        memory = outcome.memory
        if outcome.out_of_budget:
            over_budget = True
            if outcome.steps:
                attempts.append(Attempt(tuple(outcome.steps), "", None, ledger.agent_cost()))
            break
        if outcome.aborted is not None:
            error = f"environment failure: {outcome.aborted}"
            verdict = Verdict(False, error)
            attempts.append(Attempt(tuple(outcome.steps), outcome.answer, verdict, ledger.agent_cost()))
            break

        answer = outcome.answer
        window = window_payloads(memory, memory.steps[-1].index, images)
        verdict = validate(task, answer, window, modules.validator_client, modules.validator, ledger)
        attempts.append(Attempt(tuple(outcome.steps), answer, verdict, ledger.agent_cost()))
        if verdict.success:
            validated = True
            break
        memory = memory.with_note(feedback_note(verdict, number)).start_attempt()
        if number < config.max_attempts and budget.exceeded():
            over_budget = True
            break

    cost = ledger.agent_cost()
    trace = EpisodeTrace(
        task=task,
        attempts=tuple(attempts),
        final_answer=answer,
        cost_usd=cost,
        ledger_ref=ledger.id,
        error=error,
    )
    answered = sum(1 for a in attempts if a.verdict is not None)
    return EpisodeResult(
        answer=answer,
        validated=validated,
        attempts_used=answered,
        steps_total=sum(len(a.steps) for a in attempts),
        trace=trace,
        cost_usd=cost,
        budget_exceeded=over_budget,
        error=error,
    )

