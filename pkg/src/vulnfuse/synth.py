"""Deterministic synthetic contract corpus with planted vulnerability patterns.

A contract carries label j exactly when the generator inserted that label's
code pattern; distractor functions add lexical noise. Output is byte-stable
for a fixed (size, seed) pair, so pipelines built on it are reproducible.
"""

from __future__ import annotations

import json
import random
from pathlib import Path

DEFAULT_TAXONOMY = (
    "reentrancy",
    "integer-overflow",
    "unchecked-call",
    "timestamp-dependence",
    "tx-origin-auth",
)

# one recognizable pattern per label; identifier slots keep contracts distinct
PATTERNS = {
    "reentrancy": (
        "function withdraw{suffix}() public {{\n"
        "    uint256 amount = balances[msg.sender];\n"
        "    (bool ok, ) = msg.sender.call{{value: amount}}(\"\");\n"
        "    balances[msg.sender] = 0;\n"
        "}}\n"
    ),
    "integer-overflow": (
        "function mint{suffix}(uint8 units) public {{\n"
        "    uint8 total = uint8(rewards[msg.sender] + units * 16);\n"
        "    rewards[msg.sender] = total;\n"
        "}}\n"
    ),
    "unchecked-call": (
        "function pay{suffix}(address payable target, uint256 amount) public {{\n"
        "    target.send(amount);\n"
        "    ledger[target] -= amount;\n"
        "}}\n"
    ),
    "timestamp-dependence": (
        "function draw{suffix}() public {{\n"
        "    if (block.timestamp % 7 == 0) {{\n"
        "        prize = address(this).balance;\n"
        "        winner = msg.sender;\n"
        "    }}\n"
        "}}\n"
    ),
    "tx-origin-auth": (
        "function claim{suffix}() public {{\n"
        "    if (tx.origin == owner) {{\n"
        "        pendingOwner = msg.sender;\n"
        "    }}\n"
        "}}\n"
    ),
}

DISTRACTORS = (
    "function get{name}() public view returns (uint256) {{\n"
    "    return {var}Total[msg.sender];\n"
    "}}\n",
    "function set{name}(uint256 value) public {{\n"
    "    require(msg.sender == admin);\n"
    "    {var}Limit = value + {num};\n"
    "}}\n",
    "function sum{name}() public view returns (uint256) {{\n"
    "    uint256 {var}Acc = 0;\n"
    "    for (uint256 i = 0; i < {num}; i++) {{\n"
    "        {var}Acc += {var}Total[holders[i]];\n"
    "    }}\n"
    "    return {var}Acc;\n"
    "}}\n",
    "function scale{name}(uint256 base) public pure returns (uint256) {{\n"
    "    require(base <= {num});\n"
    "    return base * {num2} / 100;\n"
    "}}\n",
    "event {name}Changed(address indexed {var}Account, uint256 {var}Value);\n",
    "modifier guarded{name}() {{\n"
    "    require(msg.sender == admin, \"{var} gate {num}\");\n"
    "    _;\n"
    "}}\n",
)

_WORDS = (
    "Balance", "Escrow", "Vault", "Stake", "Reward", "Quota", "Supply", "Rate",
    "Deposit", "Margin", "Bridge", "Treasury", "Oracle", "Vesting", "Registry",
    "Auction", "Bounty", "Custody", "Refund", "Allowance",
)


def _identifier(rng: random.Random) -> str:
    return rng.choice(_WORDS) + rng.choice(_WORDS) + str(rng.randrange(100))

_LABEL_COUNT_WEIGHTS = ((0, 15), (1, 40), (2, 30), (3, 15))


def _pick_label_count(rng: random.Random) -> int:
    total = sum(w for _, w in _LABEL_COUNT_WEIGHTS)
    roll = rng.randrange(total)
    acc = 0
    for count, weight in _LABEL_COUNT_WEIGHTS:
        acc += weight
        if roll < acc:
            return count
    return 0


def _contract_source(rng: random.Random, index: int, labels: list[str]) -> str:
    parts = [
        "pragma solidity ^0.8.0;",
        "",
        f"contract Synth{index:04d} {{",
        "    mapping(address => uint256) balances;",
        "    mapping(address => uint256) rewards;",
        "    mapping(address => uint256) ledger;",
        "    address[] holders;",
        "    address owner;",
        "    address admin;",
        "    address pendingOwner;",
        "    address winner;",
        "    uint256 prize;",
    ]
    blocks = []
    for label in labels:
        # one or two copies, so longer contracts keep the pattern visible
        # in more than one window
        for _ in range(rng.randint(1, 2)):
            blocks.append(PATTERNS[label].format(suffix=rng.choice(_WORDS)))
    target_len = rng.randrange(600, 6500)
    body_len = sum(len(b) for b in blocks)
    while body_len < target_len:
        template = rng.choice(DISTRACTORS)
        name = _identifier(rng)
        block = template.format(name=name, var=name.lower(),
                                num=rng.randrange(3, 5000),
                                num2=rng.randrange(1, 100))
        blocks.append(block)
        body_len += len(block)
    rng.shuffle(blocks)
    for block in blocks:
        parts.extend("    " + line if line else "" for line in block.splitlines())
    parts.append("}")
    return "\n".join(parts) + "\n"


def generate_corpus(n: int, seed: int, taxonomy=DEFAULT_TAXONOMY) -> list[dict]:
    """`n` labeled records: {"id", "source", "labels"}, reproducible per seed."""
    rng = random.Random(seed)
    records = []
    for index in range(n):
        count = _pick_label_count(rng)
        labels = sorted(rng.sample(list(taxonomy), count))
        bits = [1 if name in labels else 0 for name in taxonomy]
        records.append({
            "id": f"synth-{index:04d}",
            "source": _contract_source(rng, index, labels),
            "labels": bits,
        })
    return records


def write_corpus(out_dir, n: int, seed: int, test_fraction: float = 0.3,
                 taxonomy=DEFAULT_TAXONOMY) -> dict:
    """Write taxonomy.json, train.jsonl and test.jsonl under `out_dir`."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    records = generate_corpus(n, seed, taxonomy)
    rng = random.Random(seed + 1)
    order = list(range(n))
    rng.shuffle(order)
    n_test = int(round(n * test_fraction))
    test_idx = set(order[:n_test])
    paths = {
        "taxonomy": out / "taxonomy.json",
        "train": out / "train.jsonl",
        "test": out / "test.jsonl",
    }
    paths["taxonomy"].write_text(json.dumps(list(taxonomy)) + "\n", encoding="utf-8")
    with open(paths["train"], "w", encoding="utf-8") as train_fh, \
            open(paths["test"], "w", encoding="utf-8") as test_fh:
        for i, record in enumerate(records):
            line = json.dumps(record, sort_keys=True) + "\n"
            (test_fh if i in test_idx else train_fh).write(line)
    return {name: str(path) for name, path in paths.items()}
