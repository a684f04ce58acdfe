"""Synthetic vision-language examples and the on-disk dataset format.

Two tasks over a g x g grid of shape tokens:

* entail  -- the text claims the grid holds more than a threshold number
  of cells of a designated query shape; the target is YES or NO. The
  claim may carry superseded draft thresholds before the operative one:
  `query MORE count ... count`, where only the LAST count token binds.
  Counting the query shape is a coarse, redundant image feature, while
  picking the operative threshold out of the drafts requires the text's
  positional structure -- the decisive bits live in the text.
* caption -- the text is a fixed instruction token; the target enumerates
  the grid's distinct shapes in row-major first-appearance order, ending
  with EOS. All the information lives in the image.

Dataset files are one example per line, space-separated integers with
literal `|` separators: `task grid... | text... | target...` where task is
0 for entail and 1 for caption.
"""

from __future__ import annotations

from dataclasses import dataclass

from .numerics import SeededRng

BOS, EOS, PAD = 0, 1, 2
YES, NO = 3, 4
MORE = 5        # comparator token in entail claims
DESCRIBE = 6    # caption instruction token
SHAPE_BASE = 8
N_SHAPES = 8
N_CAPTION_SHAPES = 5  # captions draw from a smaller shape set
COUNT_BASE = 16      # COUNT_BASE + k encodes the literal count k
QUERY_SHAPE = SHAPE_BASE  # entail claims are about this shape
MAX_DRAFTS = 3       # superseded thresholds preceding the operative one

TOKEN_NAMES = {BOS: "<bos>", EOS: "<eos>", PAD: "<pad>", YES: "yes",
               NO: "no", MORE: "more-than", DESCRIBE: "describe"}
for _k in range(N_SHAPES):
    TOKEN_NAMES[SHAPE_BASE + _k] = f"shape{_k}"
for _k in range(17):
    TOKEN_NAMES[COUNT_BASE + _k] = f"count{_k}"

TASKS = ("entail", "caption")
_TASK_ID = {"entail": 0, "caption": 1}
_ID_TASK = {v: k for k, v in _TASK_ID.items()}


@dataclass
class SyntheticExample:
    grid: list[int]     # g*g cell tokens, row-major
    text: list[int]
    target: list[int]   # entail: [YES|NO]; caption: shapes + [EOS]
    task: str

    def target_with_eos(self) -> list[int]:
        """Training/generation target; always EOS-terminated."""
        if self.target and self.target[-1] == EOS:
            return list(self.target)
        return list(self.target) + [EOS]


def detokenize(tokens) -> str:
    return " ".join(TOKEN_NAMES.get(t, f"tok{t}") for t in tokens)


def caption_target(grid) -> list[int]:
    """Canonical caption: distinct cell tokens by first appearance, + EOS."""
    seen: list[int] = []
    for cell in grid:
        if cell not in seen:
            seen.append(cell)
    return seen + [EOS]


def entail_label(grid, text) -> int:
    """Ground truth for a claim against the grid.

    `text` is `query MORE count...count`; only the last (operative)
    count token binds, earlier ones are superseded drafts."""
    query, threshold = text[0], text[-1] - COUNT_BASE
    return YES if grid.count(query) > threshold else NO


def gen_example(rng: SeededRng, task: str, grid_side: int) -> SyntheticExample:
    n = grid_side * grid_side
    if task == "entail":
        if n < 4:
            raise ValueError("entail needs a grid of at least 4 cells")
        # operative threshold k, then a query-shape count c at margin >= 2
        k = 2 + rng.randint(0, n - 3)            # 2 .. n-2
        if rng.randint(0, 2) == 0:
            c = k + 2 + rng.randint(0, n - k - 1)  # k+2 .. n  -> YES
        else:
            c = rng.randint(0, k - 1)              # 0 .. k-2  -> NO
        drafts = [2 + rng.randint(0, n - 3)
                  for _ in range(rng.randint(0, MAX_DRAFTS + 1))]
        text = ([QUERY_SHAPE, MORE] + [COUNT_BASE + d for d in drafts]
                + [COUNT_BASE + k])
        others = [SHAPE_BASE + i for i in range(N_SHAPES)
                  if SHAPE_BASE + i != QUERY_SHAPE]
        grid = [QUERY_SHAPE] * c + [rng.choice(others) for _ in range(n - c)]
        rng.shuffle(grid)
        return SyntheticExample(grid, text, [entail_label(grid, text)],
                                "entail")
    if task == "caption":
        pool = [SHAPE_BASE + i for i in range(N_CAPTION_SHAPES)]
        grid = [rng.choice(pool) for _ in range(grid_side * grid_side)]
        return SyntheticExample(grid, [DESCRIBE], caption_target(grid),
                                "caption")
    raise ValueError(f"unknown task {task!r}")


def gen_dataset(seed: int, count: int, task: str,
                grid_side: int) -> list[SyntheticExample]:
    if count < 1:
        raise ValueError("count must be >= 1")
    rng = SeededRng(seed)
    return [gen_example(rng, task, grid_side) for _ in range(count)]


def serialize_example(ex: SyntheticExample) -> str:
    parts = ([str(_TASK_ID[ex.task])] + [str(t) for t in ex.grid] + ["|"]
             + [str(t) for t in ex.text] + ["|"]
             + [str(t) for t in ex.target])
    return " ".join(parts)


def parse_example(line: str) -> SyntheticExample:
    fields = line.split()
    if fields.count("|") != 2:
        raise ValueError(f"malformed dataset line: {line!r}")
    first = fields.index("|")
    second = fields.index("|", first + 1)
    task = _ID_TASK[int(fields[0])]
    grid = [int(t) for t in fields[1:first]]
    text = [int(t) for t in fields[first + 1:second]]
    target = [int(t) for t in fields[second + 1:]]
    return SyntheticExample(grid, text, target, task)


def write_dataset(examples, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for ex in examples:
            f.write(serialize_example(ex) + "\n")


def read_dataset(path) -> list[SyntheticExample]:
    with open(path, encoding="utf-8") as f:
        return [parse_example(line) for line in f if line.strip()]
