"""Every fixed piece of prompt wording used by the pipeline.

These strings are part of the artifact's behaviour: stub rules, curated
training prompts and the judge all key off them, so edit with care.
"""

IDK = "i don't know"

DEFAULT_MISS_PHRASES = (IDK, "i do not know")

# --- answer generation -------------------------------------------------------

QA_SYSTEM = "You are a careful assistant that answers questions using the provided references."

QA_HEADER = "Current time: {query_time}"

QA_CONTEXT_INTRO = "References:"

QA_QUESTION = "Question: {question}"

QA_INSTRUCTION = (
    "Answer the question concisely using the references above. "
    "If the references do not contain the answer and you are not sure, say \"i don't know\"."
)

# Appended after QA_INSTRUCTION for the relabeling passes.
ALWAYS_ANSWER_INSTRUCTION = (
    "Always produce a best-guess answer, even if the references seem insufficient."
)

# --- API call generation -----------------------------------------------------

CALL_HEADER = "You can query a knowledge graph through the following functions:"

CALL_INSTRUCTION = (
    "Write exactly one function call, using positional arguments with quoted strings, "
    "that retrieves information useful for answering the question. "
    "If none of the functions apply, write None."
)

CALL_QUESTION = "Question: {question}\nQuery time: {query_time}"

# --- judge ---------------------------------------------------------------------

JUDGE_SYSTEM = "You grade answers to questions. Reply with a single word: yes or no."

JUDGE_TEMPLATE = (
    "Question: {question}\n"
    "Ground truth: {ground_truth}\n"
    "Candidate answer: {candidate}\n"
    "Does the candidate answer convey the same answer as the ground truth? Reply yes or no."
)
