import itertools

import numpy as np
from hypothesis import given, settings, strategies as st

from aerialforge.expressions import (
    Expression, dedupe_image, generate_rule_expressions, pluralize,
)
from aerialforge.targets import CueSet, Target


def make_target(kind="instance", category="plane", members=()):
    return Target(
        id="t1", kind=kind, category=category,
        mask=np.ones((4, 4), np.uint8), bbox=(0, 0, 3, 3),
        members=list(members),
    )


def cues(grid="top-right", color=None, flags=(), relations=()):
    return CueSet(
        category_name="plane", grid_cell=grid, extreme_flags=list(flags),
        color=color, relations=list(relations),
    )


FIG3_EXPECTED = [
    "the plane in the top-right",
    "the light plane in the top-right",
    "the plane in the top-right to the bottom-right of a plane",
    "the light plane in the top-right to the bottom-right of a plane",
    "the plane in the top-right to the top-right of a plane",
    "the light plane in the top-right to the top-right of a plane",
]


def test_fig3_reproduction_verbatim():
    c = cues(color="light", relations=[
        ("bottom-right", "n1", "plane"), ("top-right", "n2", "plane"),
    ])
    out = generate_rule_expressions(make_target(), c)
    assert sorted(e.text for e in out) == sorted(FIG3_EXPECTED)
    assert all(e.source == "rule" and e.target_id == "t1" for e in out)


def test_bare_target_single_expression():
    out = generate_rule_expressions(make_target(), cues())
    assert [e.text for e in out] == ["the plane in the top-right"]


def test_cluster_phrasing():
    target = make_target(kind="cluster", category="large vehicle",
                         members=["a", "b", "c", "d"])
    c = CueSet(category_name="large vehicle", grid_cell="top-center")
    out = generate_rule_expressions(target, c)
    assert [e.text for e in out] == ["the group of 4 large vehicles in the top-center"]


def test_class_group_phrasing():
    target = make_target(kind="class_group", category="ship", members=["a", "b"])
    c = CueSet(category_name="ship", grid_cell="center")
    out = generate_rule_expressions(target, c)
    assert [e.text for e in out] == ["all ships in the image"]


def test_semantic_region_phrasing():
    target = make_target(kind="semantic_region", category="agricultural land")
    c = CueSet(category_name="agricultural land", grid_cell="center")
    out = generate_rule_expressions(target, c)
    assert [e.text for e in out] == ["all agricultural land in the image"]


def test_extreme_variants():
    c = cues(color="light", flags=["topmost"])
    out = [e.text for e in generate_rule_expressions(make_target(), c)]
    assert "the topmost plane" in out
    assert "the topmost light plane" in out


def brute_force_expand(color, relations, flags):
    """Independent template expander: explicit cross product."""
    bases = ["the plane in the top-right"]
    if color:
        bases.append(f"the {color} plane in the top-right")
    suffixes = [""] + [f" to the {d} of a {c}" for d, _, c in relations]
    out = [b + s for b, s in itertools.product(bases, suffixes)]
    for flag in flags:
        out.append(f"the {flag} plane")
        if color:
            out.append(f"the {flag} {color} plane")
    return out


@given(
    color=st.sampled_from([None, "light", "dark", "red"]),
    n_rel=st.integers(0, 4),
    flags=st.lists(
        st.sampled_from(["topmost", "bottommost", "leftmost", "rightmost"]),
        unique=True, max_size=4,
    ),
)
@settings(max_examples=100)
def test_enumeration_count_law(color, n_rel, flags):
    dirs = ["top", "bottom", "left", "right"]
    relations = [(dirs[i], f"n{i}", "plane") for i in range(n_rel)]
    out = generate_rule_expressions(make_target(), cues(color=color, relations=relations, flags=flags))
    has_color = 1 if color else 0
    expected_count = (1 + has_color) * (1 + n_rel) + len(flags) * (1 + has_color)
    assert len(out) == expected_count
    assert sorted(e.text for e in out) == sorted(brute_force_expand(color, relations, flags))


def test_dedupe_shared_string_removed_everywhere():
    exprs = [
        Expression("the plane in the top-left", "t1", "rule"),
        Expression("the plane in the top-left", "t2", "rule"),
    ]
    assert dedupe_image(exprs) == []


def test_dedupe_unique_strings_retained():
    exprs = [
        Expression("alpha", "t1", "rule"),
        Expression("beta", "t2", "rule"),
    ]
    assert dedupe_image(exprs) == exprs


def test_dedupe_three_targets_shared_plus_unique():
    exprs = []
    for i in range(1, 4):
        exprs.append(Expression("shared", f"t{i}", "rule"))
        exprs.append(Expression(f"unique{i}", f"t{i}", "rule"))
    kept = dedupe_image(exprs)
    assert len(kept) == 3
    assert {e.target_id for e in kept} == {"t1", "t2", "t3"}
    assert all(e.text != "shared" for e in kept)


@given(
    st.lists(
        st.tuples(st.integers(0, 9), st.integers(0, 14)),  # (target, text id)
        min_size=0, max_size=60,
    )
)
@settings(max_examples=200)
def test_dedupe_property_against_multiset_oracle(pairs):
    exprs = [Expression(f"text{text}", f"t{tgt}", "rule") for tgt, text in pairs]
    kept = dedupe_image(exprs)

    # post-dedup uniqueness: every surviving text maps to exactly one target
    text_targets = {}
    for e in kept:
        text_targets.setdefault(e.text, set()).add(e.target_id)
    assert all(len(ts) == 1 for ts in text_targets.values())
    assert len(kept) == len({(e.text, e.target_id) for e in kept})

    # brute-force multiset oracle: survivors are exactly the (text, target)
    # pairs whose text belongs to a single target
    owner = {}
    for e in exprs:
        owner.setdefault(e.text, set()).add(e.target_id)
    expected = {
        (text, next(iter(tgts))) for text, tgts in owner.items() if len(tgts) == 1
    }
    assert {(e.text, e.target_id) for e in kept} == expected


def test_pluralize():
    assert pluralize("ship") == "ships"
    assert pluralize("large vehicle") == "large vehicles"
    assert pluralize("overpass") == "overpass"
