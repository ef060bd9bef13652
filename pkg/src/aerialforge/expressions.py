"""Rule-based referring expression generation and ambiguity dedup.

Templates live in data/grammar.json so the exact wording is versioned; cues
combine multiplicatively (color x relation) plus extreme-position variants.
"""

import json
from dataclasses import dataclass
from importlib import resources
from typing import Optional

from .targets import CueSet, Target


@dataclass
class Expression:
    text: str
    target_id: str
    source: str  # rule | llm_language | llm_visual
    parent_expression_id: Optional[str] = None


def load_grammar() -> dict:
    with resources.files("aerialforge.data").joinpath("grammar.json").open() as f:
        return json.load(f)


_GRAMMAR = load_grammar()


def pluralize(category: str) -> str:
    if category.endswith("s"):
        return category
    return category + "s"


def generate_rule_expressions(target: Target, cues: CueSet) -> list:
    """Enumerate the template lattice for one target.

    Single instances: (1 + has_color) * (1 + n_relations) grid expressions
    plus (1 + has_color) variants per extreme flag. Clusters, class groups and
    semantic regions use their dedicated templates.
    """
    t = _GRAMMAR["templates"]
    category = cues.category_name.lower()
    texts = []

    if target.kind == "cluster":
        texts.append(
            t["cluster"].format(
                count=len(target.members),
                category_plural=pluralize(category),
                grid_cell=cues.grid_cell,
            )
        )
    elif target.kind == "class_group":
        texts.append(t["class_group"].format(category_plural=pluralize(category)))
    elif target.kind == "semantic_region":
        texts.append(t["semantic_region"].format(category=category))
    else:
        bases = [t["instance_base"].format(category=category, grid_cell=cues.grid_cell)]
        if cues.color:
            bases.append(
                t["instance_color"].format(
                    color=cues.color, category=category, grid_cell=cues.grid_cell
                )
            )
        suffixes = [""]
        for direction, neighbor_category in _relation_phrases(cues):
            suffixes.append(
                t["relation_suffix"].format(
                    direction=direction, neighbor_category=neighbor_category
                )
            )
        for base in bases:
            for suffix in suffixes:
                texts.append(base + suffix)
        for flag in cues.extreme_flags:
            texts.append(t["extreme_base"].format(flag=flag, category=category))
            if cues.color:
                texts.append(
                    t["extreme_color"].format(flag=flag, color=cues.color, category=category)
                )

    return [Expression(text=s, target_id=target.id, source="rule") for s in texts]


def _relation_phrases(cues: CueSet) -> list:
    """(direction, neighbor category) pairs; neighbor category defaults to the
    subject's own category when the relation carries no explicit one."""
    phrases = []
    for rel in cues.relations:
        direction, neighbor = rel[0], rel[1]
        neighbor_category = rel[2] if len(rel) > 2 else cues.category_name
        phrases.append((direction, neighbor_category.lower()))
    return phrases


def generate_tile_expressions(targets: list, cues_by_id: dict) -> list:
    """Rule expressions for every target in a tile, with relation neighbor
    categories resolved from the target list."""
    cat_by_id = {t.id: t.category for t in targets}
    out = []
    for target in targets:
        cues = cues_by_id[target.id]
        resolved = CueSet(
            category_name=cues.category_name,
            grid_cell=cues.grid_cell,
            extreme_flags=cues.extreme_flags,
            color=cues.color,
            relations=[
                (d, nid, cat_by_id.get(nid, cues.category_name))
                for d, nid in cues.relations
            ],
        )
        out.extend(generate_rule_expressions(target, resolved))
    return out


def dedupe_image(expressions: list) -> list:
    """Remove every copy of any text attached to two or more distinct targets.

    Targets left without expressions are implicitly dropped downstream.
    """
    targets_per_text = {}
    for e in expressions:
        targets_per_text.setdefault(e.text, set()).add(e.target_id)
    out = []
    seen = set()
    for e in expressions:
        if len(targets_per_text[e.text]) != 1:
            continue
        if (e.text, e.target_id) in seen:  # collapse same-target repeats
            continue
        seen.add((e.text, e.target_id))
        out.append(e)
    return out
