"""Dataset loading: tokenization, truncation, and the three corpus families.

All loaders produce the same labeled representation (QAExample grouped into
QuestionGroup), so the model and evaluation layers never see dataset quirks.
The canonical on-disk form is a headerless UTF-8 TSV with columns
(qid, question, aid, answer, label); ``rtm convert-dataset`` maps official
distributions onto it.  The answer-forum XML dump is parsed natively.
"""

import html
import logging
import re
import xml.etree.ElementTree as ET
from dataclasses import dataclass, field
from pathlib import Path

from .numkit import make_rng

log = logging.getLogger(__name__)

WIKIQA_TRUNCATION = 40
FORUM_ANSWER_TRUNCATION = 300
FORUM_SPLIT_SIZES = (116031, 10000, 15000)

_TOKEN_RE = re.compile(r"[^\W_]+", re.UNICODE)
_TAG_RE = re.compile(r"<[^>]*>")


class CorpusError(Exception):
    """Malformed dataset input."""


@dataclass
class QAExample:
    """One (question, candidate answer, label) triple."""

    qid: str
    question_tokens: list
    answer_tokens: list
    label: float
    aid: str


@dataclass
class QuestionGroup:
    """All candidates of one question, in load order."""

    qid: str
    examples: list


@dataclass
class DatasetSplit:
    name: str
    groups: list
    stats: object = None  # train-derived CorpusStats, attached by pipelines

    @property
    def examples(self):
        return [ex for g in self.groups for ex in g.examples]

    @property
    def num_questions(self):
        return len(self.groups)

    @property
    def num_pairs(self):
        return sum(len(g.examples) for g in self.groups)


def tokenize(text):
    """Lowercased tokens split at whitespace/punctuation; punctuation dropped."""
    return _TOKEN_RE.findall(text.lower())


def truncate(tokens, limit):
    """First min(len, limit) tokens."""
    if limit < 1:
        raise ValueError(f"truncation limit must be >= 1, got {limit}")
    return tokens[:limit]


def group_by_question(examples):
    """Stable grouping by qid, preserving first-seen question order."""
    groups = {}
    order = []
    for ex in examples:
        if ex.qid not in groups:
            groups[ex.qid] = QuestionGroup(qid=ex.qid, examples=[])
            order.append(ex.qid)
        groups[ex.qid].examples.append(ex)
    return [groups[q] for q in order]


def _check_split_disjointness(splits):
    seen = {}
    for split in splits:
        for g in split.groups:
            if g.qid in seen and seen[g.qid] != split.name:
                raise CorpusError(
                    f"question {g.qid!r} appears in both "
                    f"{seen[g.qid]!r} and {split.name!r} splits"
                )
            seen[g.qid] = split.name


def _check_unique_aids(split):
    for g in split.groups:
        aids = [ex.aid for ex in g.examples]
        if len(set(aids)) != len(aids):
            raise CorpusError(f"duplicate candidate id within question {g.qid!r}")


def load_canonical_tsv(path, name, question_limit=None, answer_limit=None):
    """Load one split from the canonical 5-column TSV.

    Empty questions or answers (after tokenization) are skipped with a logged
    count rather than rejected wholesale.
    """
    path = Path(path)
    examples = []
    skipped = 0
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            cols = line.split("\t")
            if len(cols) != 5:
                raise CorpusError(
                    f"{path}:{lineno}: expected 5 tab-separated columns, got {len(cols)}"
                )
            qid, question, aid, answer, label_s = cols
            try:
                label = float(label_s)
            except ValueError:
                raise CorpusError(f"{path}:{lineno}: bad label {label_s!r}") from None
            q_tokens = tokenize(question)
            a_tokens = tokenize(answer)
            if not q_tokens or not a_tokens:
                skipped += 1
                continue
            if question_limit:
                q_tokens = truncate(q_tokens, question_limit)
            if answer_limit:
                a_tokens = truncate(a_tokens, answer_limit)
            examples.append(QAExample(qid, q_tokens, a_tokens, label, aid))
    if skipped:
        log.info("%s: skipped %d pairs with empty question/answer text", path, skipped)
    split = DatasetSplit(name=name, groups=group_by_question(examples))
    split.skipped = skipped
    _check_unique_aids(split)
    return split


def _find_split_file(root, name):
    root = Path(root)
    for candidate in (root / f"{name}.tsv", root / f"{name}.txt"):
        if candidate.exists():
            return candidate
    raise FileNotFoundError(f"no {name} split file under {root}")


def load_wikiqa(path, truncation=WIKIQA_TRUNCATION):
    """Load canonical train/dev/test TSVs, truncating both sides to 40 tokens."""
    splits = []
    for name in ("train", "dev", "test"):
        split = load_canonical_tsv(
            _find_split_file(path, name),
            name,
            question_limit=truncation,
            answer_limit=truncation,
        )
        log.info(
            "wikiqa %s: %d questions, %d pairs", name, split.num_questions, split.num_pairs
        )
        splits.append(split)
    _check_split_disjointness(splits)
    return tuple(splits)


def load_trecqa(path, truncation=None):
    """Load canonical train/dev/test TSVs; no truncation unless asked."""
    splits = []
    for name in ("train", "dev", "test"):
        split = load_canonical_tsv(
            _find_split_file(path, name),
            name,
            question_limit=truncation,
            answer_limit=truncation,
        )
        log.info(
            "trecqa %s: %d questions, %d pairs", name, split.num_questions, split.num_pairs
        )
        splits.append(split)
    _check_split_disjointness(splits)
    return tuple(splits)


def _strip_markup(text):
    return _TAG_RE.sub(" ", html.unescape(text or ""))


def _parse_forum_xml(path):
    """Yield (question_text, best_answers, other_answers) per question element."""
    try:
        tree = ET.parse(path)
    except ET.ParseError as e:
        line, col = e.position
        raise CorpusError(f"{path}: XML parse error at line {line}, column {col}") from e
    root = tree.getroot()
    # question documents may sit at any depth depending on the wrapper schema
    for node in root.iter():
        best = [el.text or "" for el in node.findall("bestanswer")]
        if not best:
            continue
        subject = node.findtext("subject") or ""
        others = [
            el.text or ""
            for el in node.findall(".//answer_item")
            if (el.text or "").strip()
        ]
        yield subject, best, others


def load_yahoo_l4(
    path,
    split_sizes=None,
    seed=0,
    answer_truncation=FORUM_ANSWER_TRUNCATION,
):
    """Load the forum XML dump into best-answer-selection splits.

    The best answer of each question is labeled 1 and every other answer 0;
    questions with several best answers are dropped, answers truncated to 300
    tokens, and questions are split train/dev/test by a seeded shuffle.
    """
    sizes = tuple(split_sizes) if split_sizes else FORUM_SPLIT_SIZES
    if len(sizes) != 3:
        raise ValueError("split_sizes must be (train, dev, test)")
    groups = []
    dropped_multi_best = 0
    skipped_empty = 0
    qnum = 0
    for subject, best, others in _parse_forum_xml(path):
        qnum += 1
        if len(best) > 1:
            dropped_multi_best += 1
            continue
        q_tokens = tokenize(_strip_markup(subject))
        if not q_tokens:
            skipped_empty += 1
            continue
        qid = f"Q{qnum}"
        examples = []
        candidates = [(best[0], 1.0)] + [
            (o, 0.0) for o in others if o.strip() != best[0].strip()
        ]
        for idx, (text, label) in enumerate(candidates):
            a_tokens = truncate(tokenize(_strip_markup(text)), answer_truncation)
            if not a_tokens:
                continue
            examples.append(QAExample(qid, q_tokens, a_tokens, label, f"{qid}-A{idx}"))
        if not examples:
            skipped_empty += 1
            continue
        groups.append(QuestionGroup(qid=qid, examples=examples))
    if dropped_multi_best:
        log.info("dropped %d questions with multiple best answers", dropped_multi_best)
    if skipped_empty:
        log.info("skipped %d questions with no usable text", skipped_empty)

    n_train, n_dev, n_test = sizes
    if len(groups) < n_train + n_dev + n_test:
        raise CorpusError(
            f"{path}: {len(groups)} usable questions, need "
            f"{n_train + n_dev + n_test} for the requested split sizes"
        )
    order = make_rng(seed).permutation(len(groups))
    shuffled = [groups[i] for i in order]
    splits = (
        DatasetSplit("train", shuffled[:n_train]),
        DatasetSplit("dev", shuffled[n_train : n_train + n_dev]),
        DatasetSplit("test", shuffled[n_train + n_dev : n_train + n_dev + n_test]),
    )
    _check_split_disjointness(splits)
    return splits


def convert_wikiqa_official(src, dst):
    """Rewrite an official 7-column WikiQA TSV (with header) to canonical form."""
    src, dst = Path(src), Path(dst)
    n = 0
    with open(src, encoding="utf-8") as fin, open(dst, "w", encoding="utf-8") as fout:
        for lineno, line in enumerate(fin, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            cols = line.split("\t")
            if lineno == 1 and cols[0].lower() == "questionid":
                continue
            if len(cols) != 7:
                raise CorpusError(
                    f"{src}:{lineno}: expected 7 columns in official format, got {len(cols)}"
                )
            qid, question, _docid, _title, aid, sentence, label = cols
            fout.write(f"{qid}\t{question}\t{aid}\t{sentence}\t{label}\n")
            n += 1
    return n


def convert_trecqa_jacana(src, dst):
    """Rewrite the jacana-style TrecQA markup to canonical TSV."""
    src, dst = Path(src), Path(dst)
    n = 0
    qid = None
    question = None
    mode = None
    counter = 0
    with open(src, encoding="utf-8") as fin, open(dst, "w", encoding="utf-8") as fout:
        for lineno, raw in enumerate(fin, start=1):
            line = raw.strip()
            if not line:
                continue
            if line.startswith("<QApairs"):
                m = re.search(r"id=['\"]([^'\"]+)['\"]", line)
                qid = m.group(1) if m else f"q{lineno}"
                question = None
                counter = 0
                mode = None
            elif line.startswith("</QApairs"):
                qid = None
            elif line.startswith("<question"):
                mode = "question"
            elif line.startswith("<positive"):
                mode = "positive"
            elif line.startswith("<negative"):
                mode = "negative"
            elif line.startswith("</"):
                mode = None
            elif line.startswith("<"):
                raise CorpusError(f"{src}:{lineno}: unrecognized tag {line[:30]!r}")
            else:
                text = " ".join(line.split())
                if mode == "question":
                    question = text
                elif mode in ("positive", "negative"):
                    if qid is None or question is None:
                        raise CorpusError(f"{src}:{lineno}: answer before question")
                    counter += 1
                    label = 1 if mode == "positive" else 0
                    fout.write(f"{qid}\t{question}\t{qid}-A{counter}\t{text}\t{label}\n")
                    n += 1
    return n
