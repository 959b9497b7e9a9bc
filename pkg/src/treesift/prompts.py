"""Prompt templates for step-wise answering, verdict judging, and RFT export.

The three templates are frozen text: golden copies live under ``prompts/``
at the repository root and the test suite asserts the constants below match
them character for character. Do not reflow or "fix" the wording.
"""

from __future__ import annotations

STEP_ANSWER_PROMPT_TEMPLATE = (
    "Answer the question **step by step** and provide the final answer at the end, "
    "each step should end with **<end>** and put your final answer within $\\boxed{}$. "
    "Below are two examples:\n"
    "Question: BoatsRUs built 7 canoes in January of this year and then each subsequent "
    "calendar month they built twice the number of canoes they had built the previous "
    "month. How many total canoes were built by BoatsRUs by the end of May of this year?\n"
    "### Step1: To find the result of the total number of canoes built by BoatsRUs by "
    "the end of May, I need to find the number of canoes built in each month from January "
    "to May and then add them up. <end>\n"
    "### Step2: To find the number of canoes built in each month, I need to use the "
    "formula for the number of canoes built in a given month, which is the number of "
    "canoes built in the previous month times 2. <end>\n"
    "### Step3: So, the number of canoes built in January is 7, the number of canoes "
    "built in February is 7 times 2, which is 14, the number of canoes built in March is "
    "14 times 2, which is 28, the number of canoes built in April is 28 times 2, which is "
    "56, and the number of canoes built in May is 56 times 2, which is 112. <end>\n"
    "### Step4: Now, I can add up these numbers to get the total number of canoes built "
    "by BoatsRUs by the end of May: 7 plus 14 plus 28 plus 56 plus 112, which is 217. "
    "<end>\n"
    "### Final Answer: The answer is: $\\boxed{217}$.\n"
    "Question: Find the number of blue circles in the figure.\n"
    "### Step 1: To find the result of the number of blue circles, I need to interpret "
    "the figure. The figure is a Venn diagram with two labeled sets: - One set labeled "
    '"blue" contains all the shapes that are blue in color. - The other set labeled '
    '"circle" contains all the shapes that are circular in shape. The overlapping region '
    "of the Venn diagram contains shapes that are both blue and circular. <end>\n"
    "### Step 2: The overlapping region contains shapes that meet both criteria: Blue "
    "color and Circle shape. From the diagram: - There is **one blue circle** in the "
    "overlapping region. <end>\n"
    "### Final Answer: The answer is: $\\boxed{1}$.\n"
    "Remember to answer the question **step by step**! Here is your question:\n"
    "Question: {QUESTION}"
)

CRITIC_PROMPT_TEMPLATE = (
    "Please help me judge the correctness of the generated answer and the "
    "corresponding rationale.\n"
    "Question: {}\n"
    "Ground truth answer: {}\n"
    "Generated rationale and answer: {}\n"
    "Your output should only be one sentence: the generated answer is true or false."
)

RFT_PROMPT_TEMPLATE = (
    "You FIRST think about the reasoning process as an internal monologue and then "
    "provide the final answer. The reasoning process MUST BE enclosed within "
    "<think> </think> tags. The final answer MUST BE put in $\\boxed{}$."
)


def render_step_answer_prompt(question: str) -> str:
    """Substitute the question into the step-wise answering template."""
    return STEP_ANSWER_PROMPT_TEMPLATE.replace("{QUESTION}", question)


def render_critic_prompt(question: str, ground_truth: str, generated: str) -> str:
    """Fill the three verdict slots: question, ground truth, generated text."""
    return CRITIC_PROMPT_TEMPLATE.format(question, ground_truth, generated)


def render_rft_prompt(question: str) -> str:
    """Prefix a question with the RFT instruction block."""
    return f"{RFT_PROMPT_TEMPLATE}\n{question}"
