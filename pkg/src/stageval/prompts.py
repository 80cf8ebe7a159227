"""Prompt templates for every model call the pipeline makes.

Templates are jinja2 sources rendered with strict binding rules: every
placeholder a template declares must be bound, and every binding offered
must be declared. Both directions fail loudly, so a renamed placeholder or
a stale caller cannot silently ship a half-filled prompt.

Built-in templates exist in English ("en") and Chinese ("zh") for five
call kinds: "decompose", "rubric", "judge", "baseline", "classify". Both
language variants share identical JSON output contracts with English
PascalCase stage names as keys, so downstream parsing never depends on the
prompt language.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any

from jinja2 import Environment, StrictUndefined, meta

_env = Environment(
    undefined=StrictUndefined,
    trim_blocks=True,
    lstrip_blocks=True,
    keep_trailing_newline=True,
    autoescape=False,
)


@dataclass(frozen=True)
class PromptTemplate:
    """A (system, user) prompt pair with declared placeholders."""

    kind: str
    language: str
    system_source: str
    user_source: str

    @property
    def name(self) -> str:
        return f"{self.kind}:{self.language}"

    @property
    def placeholders(self) -> frozenset[str]:
        """Every variable either source declares, including ones used only
        inside conditionals."""
        names: set[str] = set()
        for source in (self.system_source, self.user_source):
            names |= meta.find_undeclared_variables(_env.parse(source))
        return frozenset(names)

    def render(self, **bindings: Any) -> tuple[str, str]:
        """Render to (system, user). Rejects missing and extra bindings."""
        declared = self.placeholders
        missing = declared - set(bindings)
        if missing:
            raise ValueError(
                f"template {self.name}: unbound placeholders {sorted(missing)}"
            )
        extra = set(bindings) - declared
        if extra:
            raise ValueError(
                f"template {self.name}: unknown bindings {sorted(extra)}"
            )
        system = _env.from_string(self.system_source).render(**bindings)
        user = _env.from_string(self.user_source).render(**bindings)
        return system, user


_DECOMPOSE_EN = PromptTemplate(
    kind="decompose",
    language="en",
    system_source=(
        "You are a senior judge of mathematical modeling contest submissions. "
        "You break a full modeling problem into an ordered list of "
        "self-contained subtasks so each one can be evaluated on its own. "
        "Always answer with a single JSON object and nothing else."
    ),
    user_source="""\
Problem title: {{ title }}

Problem statement:
{{ statement }}
{% if attachment_names %}
Data files provided with the problem: {{ attachment_names }}
{% endif %}

Split this problem into its distinct modeling subtasks, in the order they \
must be solved. Each subtask must be understandable on its own: state in \
full what has to be produced, not just a pointer into the problem text. \
Keep the number of subtasks faithful to the problem's own structure; do \
not invent extra work and do not merge genuinely separate requirements.

Answer with JSON of this exact shape:
{"subtasks": [{"description": "<full self-contained statement of the subtask>", "depends_on": [<1-based ordinals of earlier subtasks this one builds on>]}]}
""",
)

_DECOMPOSE_ZH = PromptTemplate(
    kind="decompose",
    language="zh",
    system_source=(
        "你是数学建模竞赛作品的资深评审。你的任务是把一道完整的建模题目"
        "拆分成按求解顺序排列、各自独立完整的子任务，便于逐项评估。"
        "只输出一个 JSON 对象，不要输出其他内容。"
    ),
    user_source="""\
题目标题：{{ title }}

题目描述：
{{ statement }}
{% if attachment_names %}
随题提供的数据文件：{{ attachment_names }}
{% endif %}

请把这道题拆分成彼此区分的建模子任务，并按必须求解的先后顺序排列。\
每个子任务要能独立理解：完整说明需要完成什么，而不是仅仅指向原题中的某一处。\
子任务数量要忠实于题目本身的结构，不要编造额外工作，也不要把确实独立的要求合并。

按如下 JSON 结构作答：
{"subtasks": [{"description": "<子任务的完整独立描述>", "depends_on": [<该子任务依赖的前序子任务序号，从 1 开始>]}]}
""",
)

_RUBRIC_EN = PromptTemplate(
    kind="rubric",
    language="en",
    system_source=(
        "You design grading rubrics for mathematical modeling reports. Given "
        "one subtask of a modeling problem, you first write down how you "
        "understand the task, then produce scoring criteria for each stage "
        "of the modeling workflow. Always answer with a single JSON object "
        "and nothing else."
    ),
    user_source="""\
Problem background:
{{ background }}

Full question:
{{ question }}
{% if previous_subtasks %}
Subtasks already defined before this one:
{{ previous_subtasks }}
{% endif %}

Subtask to build a rubric for:
{{ subtask }}

First, state your understanding of the subtask in five fields: core_goal, \
expected_output, key_inputs_constraints, modeling_type, role_in_pipeline. \
All five must be filled in.

Then write evaluation criteria for each of the seven workflow stages: \
ProblemIdentification, ProblemFormulation, AssumptionDevelopment, \
ModelConstruction, ModelSolving, CodeImplementation, ResultAnalysis. For \
every stage that genuinely applies to this subtask, give between 3 and 5 \
criteria whose integer scores sum to exactly 100 for that stage. Every \
criterion needs a short name (sub_criteria), a description of what is \
checked, an integer score (its weight in points), an evaluation_focus \
saying what evidence to look at, and a scoring_hint saying how to award \
partial credit. If a stage does not apply to this subtask, map it to \
{"not_applicable_reason": "<why>"} instead of a list. Each of the seven \
stages must appear exactly once, one way or the other.

Answer with JSON of this exact shape:
{
  "task_understanding": {"core_goal": "...", "expected_output": "...", "key_inputs_constraints": "...", "modeling_type": "...", "role_in_pipeline": "..."},
  "evaluation_criteria": {
    "ProblemIdentification": [{"sub_criteria": "...", "description": "...", "score": 40, "evaluation_focus": "...", "scoring_hint": "..."}],
    "CodeImplementation": {"not_applicable_reason": "..."}
  }
}
(The example shows one stage of each kind; your answer must cover all seven stages.)
""",
)

_RUBRIC_ZH = PromptTemplate(
    kind="rubric",
    language="zh",
    system_source=(
        "你负责为数学建模报告设计评分细则。给定建模题目的一个子任务，"
        "你先写出对该任务的理解，再为建模流程的每个阶段给出评分标准。"
        "只输出一个 JSON 对象，不要输出其他内容。"
    ),
    user_source="""\
题目背景：
{{ background }}

完整题目：
{{ question }}
{% if previous_subtasks %}
在此之前已定义的子任务：
{{ previous_subtasks }}
{% endif %}

需要制定评分细则的子任务：
{{ subtask }}

首先用五个字段写出你对该子任务的理解：core_goal、expected_output、\
key_inputs_constraints、modeling_type、role_in_pipeline，五项都必须填写。

然后为建模流程的七个阶段逐一编写评分标准：ProblemIdentification、\
ProblemFormulation、AssumptionDevelopment、ModelConstruction、ModelSolving、\
CodeImplementation、ResultAnalysis。对每个确实适用于该子任务的阶段，给出 \
3 到 5 条标准，且该阶段各条标准的整数分值之和必须恰好等于 100。每条标准包括：\
简短名称（sub_criteria）、考查内容说明（description）、整数分值（score）、\
应查看哪些证据（evaluation_focus）、如何给部分分（scoring_hint）。\
若某阶段不适用于该子任务，则将其映射为 {"not_applicable_reason": "<原因>"} \
而不是列表。七个阶段必须且只能各出现一次。

按如下 JSON 结构作答：
{
  "task_understanding": {"core_goal": "...", "expected_output": "...", "key_inputs_constraints": "...", "modeling_type": "...", "role_in_pipeline": "..."},
  "evaluation_criteria": {
    "ProblemIdentification": [{"sub_criteria": "...", "description": "...", "score": 40, "evaluation_focus": "...", "scoring_hint": "..."}],
    "CodeImplementation": {"not_applicable_reason": "..."}
  }
}
（示例只各展示了一种情形；你的回答必须覆盖全部七个阶段。）
""",
)

_JUDGE_EN = PromptTemplate(
    kind="judge",
    language="en",
    system_source="""\
You grade one subtask of a mathematical modeling report against a fixed \
rubric, stage by stage and criterion by criterion. Judge only what the \
report actually shows, and cite its content as evidence. Always answer \
with a single JSON object and nothing else.

For each criterion, award points and pick the matching verdict level:
- FullyMet: 90% to 100% of the criterion's points
- AlmostMet: at least 70% and under 90%
- PartiallyMet: at least 40% and under 70%
- BarelyNotMet: at least 20% and under 40%
- NotMet: above 0% and under 20%
- CompletelyNotMet: exactly 0
The awarded points must fall inside the band of the level you pick. \
Whenever the level is anything other than FullyMet, the comment must \
point at the specific shortfall in the report.""",
    user_source="""\
Subtask under evaluation:
{{ subproblem }}

Report content to grade:
{{ report_content }}

Rubric (criteria grouped by stage, with each criterion's name and maximum points):
{{ report_criteria }}

Grade every criterion listed in the rubric, keeping the stage grouping. \
For each criterion return: dimension (the criterion name exactly as \
given), comment (your evidence), score (points awarded, between 0 and the \
criterion's maximum), level (one of FullyMet, AlmostMet, PartiallyMet, \
BarelyNotMet, NotMet, CompletelyNotMet).

Answer with JSON of this exact shape:
{"<StageName>": [{"dimension": "...", "comment": "...", "score": 12, "level": "AlmostMet"}]}
using the same stage names as the rubric. Do not add, drop, or rename criteria.
""",
)

_JUDGE_ZH = PromptTemplate(
    kind="judge",
    language="zh",
    system_source="""\
你按照固定的评分细则，逐阶段、逐条标准地评审数学建模报告中的一个子任务。\
只依据报告实际呈现的内容评判，并引用报告内容作为证据。\
只输出一个 JSON 对象，不要输出其他内容。

对每条标准，给出得分并选择对应的评级：
- FullyMet：得分占该条满分的 90% 至 100%
- AlmostMet：不低于 70% 且低于 90%
- PartiallyMet：不低于 40% 且低于 70%
- BarelyNotMet：不低于 20% 且低于 40%
- NotMet：高于 0% 且低于 20%
- CompletelyNotMet：恰好为 0
所给分数必须落在所选评级对应的区间内。只要评级不是 FullyMet，\
comment 中必须指出报告中的具体不足。""",
    user_source="""\
待评审的子任务：
{{ subproblem }}

需要评分的报告内容：
{{ report_content }}

评分细则（按阶段分组，给出每条标准的名称与满分）：
{{ report_criteria }}

请对细则中列出的每条标准逐一评分，保持按阶段分组。每条标准返回：\
dimension（与细则中完全一致的标准名称）、comment（你的证据）、\
score（所给分数，介于 0 与该条满分之间）、level（FullyMet、AlmostMet、\
PartiallyMet、BarelyNotMet、NotMet、CompletelyNotMet 之一）。

按如下 JSON 结构作答：
{"<StageName>": [{"dimension": "...", "comment": "...", "score": 12, "level": "AlmostMet"}]}
阶段名称与细则保持一致。不得增删或改名任何标准。
""",
)

_BASELINE_EN = PromptTemplate(
    kind="baseline",
    language="en",
    system_source=(
        "You grade a complete mathematical modeling report as a whole, "
        "without a detailed rubric. Always answer with a single JSON object "
        "and nothing else."
    ),
    user_source="""\
Question:
{{ question }}

Report:
{{ report_content }}

Score the report from 0 to 10 on four dimensions (half points allowed):
- ProblemAnalysis: how well the report understands and frames the problem
- ModelingRigor: soundness and rigor of the models used
- PracticalityScientificity: whether the approach is practical and scientifically grounded
- ResultBias: credibility of the results and absence of distortion (10 means no bias)

Answer with JSON of this exact shape:
{"ProblemAnalysis": 8.5, "ModelingRigor": 8, "PracticalityScientificity": 9, "ResultBias": 8.5}
""",
)

_BASELINE_ZH = PromptTemplate(
    kind="baseline",
    language="zh",
    system_source=(
        "你对一份完整的数学建模报告作整体评分，不使用逐条细则。"
        "只输出一个 JSON 对象，不要输出其他内容。"
    ),
    user_source="""\
题目：
{{ question }}

报告：
{{ report_content }}

从四个维度对报告打 0 到 10 分（允许半分）：
- ProblemAnalysis：报告对问题的理解与把握程度
- ModelingRigor：所用模型的合理性与严谨性
- PracticalityScientificity：方法是否实用且有科学依据
- ResultBias：结果的可信度与无偏程度（10 表示没有偏差）

按如下 JSON 结构作答：
{"ProblemAnalysis": 8.5, "ModelingRigor": 8, "PracticalityScientificity": 9, "ResultBias": 8.5}
""",
)

_CLASSIFY_EN = PromptTemplate(
    kind="classify",
    language="en",
    system_source=(
        "You label the root causes of weaknesses found while grading one "
        "stage of a mathematical modeling report. You may only use labels "
        "from the provided list. Always answer with a single JSON object "
        "and nothing else."
    ),
    user_source="""\
Workflow stage: {{ stage }}

Allowed failure labels for this stage, with what each one means:
{{ taxonomy }}

Grader evidence for this report at this stage (criterion comments and awarded fractions):
{{ evidence }}

Pick every label whose definition matches the evidence, at least one. \
Use the label text exactly as listed.

Answer with JSON of this exact shape:
{"labels": ["<label>", "<label>"]}
""",
)

_CLASSIFY_ZH = PromptTemplate(
    kind="classify",
    language="zh",
    system_source=(
        "你为数学建模报告某一阶段评分中发现的薄弱点标注根本原因。"
        "只能使用给定列表中的标签。只输出一个 JSON 对象，不要输出其他内容。"
    ),
    user_source="""\
流程阶段：{{ stage }}

该阶段允许使用的失败标签及其含义：
{{ taxonomy }}

评审者对该报告在该阶段的证据（各条标准的评语与得分比例）：
{{ evidence }}

选出定义与证据相符的所有标签，至少一个。标签文字必须与列表完全一致。

按如下 JSON 结构作答：
{"labels": ["<标签>", "<标签>"]}
""",
)

_TEMPLATES: dict[tuple[str, str], PromptTemplate] = {
    (t.kind, t.language): t
    for t in (
        _DECOMPOSE_EN,
        _DECOMPOSE_ZH,
        _RUBRIC_EN,
        _RUBRIC_ZH,
        _JUDGE_EN,
        _JUDGE_ZH,
        _BASELINE_EN,
        _BASELINE_ZH,
        _CLASSIFY_EN,
        _CLASSIFY_ZH,
    )
}

KINDS = tuple(sorted({kind for kind, _ in _TEMPLATES}))
LANGUAGES = tuple(sorted({lang for _, lang in _TEMPLATES}))


def get_template(kind: str, language: str = "en") -> PromptTemplate:
    """Look up a built-in template; unknown names fail with the known sets."""
    try:
        return _TEMPLATES[(kind, language)]
    except KeyError:
        raise ValueError(
            f"no template {kind!r}/{language!r}; kinds: {list(KINDS)}, "
            f"languages: {list(LANGUAGES)}"
        ) from None
