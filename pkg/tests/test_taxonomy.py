import json

import pytest
from hypothesis import given, strategies as st

from gridforge.taxonomy import (ROOT_IDS, Domain, Taxonomy, TaxonomyError, TaxonomyNode, UnknownNode,
                                UnmappedTerm, UnresolvedDomain, ancestors, classify, domain_of, load_mapping,
                                load_taxonomy, mapping_from_json, normalize_term, validate_taxonomy)


def roots(domain_for_renewable="renewable"):
    return [TaxonomyNode("renewable", "Renewable", 1, None, domain_for_renewable),
            TaxonomyNode("fossil", "Fossil", 1, None, "conventional"),
            TaxonomyNode("nuclear", "Nuclear", 1, None, "conventional"),
            TaxonomyNode("other_or_unspecified", "Other", 1, None, "conventional")]


def kinds(report):
    return {v.kind for v in report}


def test_shipped_taxonomy_valid(taxonomy):
    assert validate_taxonomy(taxonomy) == []
    assert set(taxonomy.at_level(1)) == ROOT_IDS


def test_minimal_valid():
    t = Taxonomy(tuple(roots() + [TaxonomyNode("lignite", "Lignite", 2, "fossil")]))
    assert validate_taxonomy(t) == []


def test_level_skip():
    t = Taxonomy(tuple(roots() + [TaxonomyNode("x", "X", 3, "fossil")]))
    report = validate_taxonomy(t)
    assert "level skip" in kinds(report)
    assert [v.node_id for v in report if v.kind == "level skip"] == ["x"]


def test_cycle():
    t = Taxonomy(tuple(roots() + [TaxonomyNode("a", "A", 2, "b"), TaxonomyNode("b", "B", 2, "a")]))
    assert "cycle" in kinds(validate_taxonomy(t))


def test_wrong_roots():
    nodes = roots()[:3] + [TaxonomyNode("misc", "Misc", 1, None, "conventional")]
    assert "roots" in kinds(validate_taxonomy(Taxonomy(tuple(nodes))))


def test_duplicate_and_unknown_parent():
    nodes = roots() + [TaxonomyNode("gas", "Gas", 2, "fossil"), TaxonomyNode("gas", "Gas", 2, "fossil"),
                       TaxonomyNode("y", "Y", 2, "nowhere")]
    assert {"duplicate id", "unknown parent"} <= kinds(validate_taxonomy(Taxonomy(tuple(nodes))))


def test_unresolved_domain_is_reported():
    nodes = roots("both") + [TaxonomyNode("wind", "Wind", 2, "renewable")]
    report = validate_taxonomy(Taxonomy(tuple(nodes)))
    assert [v.node_id for v in report if v.kind == "unresolved domain"] == ["wind"]


def test_load_rejects_invalid(tmp_path):
    p = tmp_path / "t.json"
    p.write_text(json.dumps([{"id": "renewable", "level": 1, "domain": "renewable"}]), encoding="utf-8")
    with pytest.raises(TaxonomyError, match="roots"):
        load_taxonomy(p)


def test_ancestors(taxonomy):
    assert ancestors("biogas", taxonomy) == ["renewable", "bioenergy", "biogas"]
    assert ancestors("nuclear", taxonomy) == ["nuclear"]
    with pytest.raises(UnknownNode):
        ancestors("unobtainium", taxonomy)


def test_ancestor_paths_total(taxonomy):
    for n in taxonomy.nodes:
        path = ancestors(n.id, taxonomy)
        assert len(path) == n.level
        assert path[0] in ROOT_IDS


@pytest.mark.parametrize("node,domain", [("run_of_river", Domain.RENEWABLE),
                                         ("pumped_hydro_storage", Domain.CONVENTIONAL),
                                         ("lignite", Domain.CONVENTIONAL),
                                         ("biogas", Domain.RENEWABLE),
                                         ("nuclear", Domain.CONVENTIONAL)])
def test_domain_of(taxonomy, node, domain):
    assert domain_of(node, taxonomy) == domain


def test_hydro_itself_is_unresolved(taxonomy):
    with pytest.raises(UnresolvedDomain):
        domain_of("hydro", taxonomy)


def test_leaves_partitioned(taxonomy):
    conv = {leaf for leaf in taxonomy.leaves() if domain_of(leaf, taxonomy) == Domain.CONVENTIONAL}
    ren = {leaf for leaf in taxonomy.leaves() if domain_of(leaf, taxonomy) == Domain.RENEWABLE}
    assert conv | ren == set(taxonomy.leaves())
    assert not conv & ren


def test_classify_examples(taxonomy):
    m = load_mapping("opsd_de", taxonomy)
    assert classify("Braunkohle", m, taxonomy) == "lignite"
    assert classify(" Lignite ", m, taxonomy) == "lignite"
    with pytest.raises(UnmappedTerm) as err:
        classify("  UNOBTAINIUM ", m, taxonomy)
    assert err.value.term == "unobtainium"


def test_classify_default_route(taxonomy):
    m = load_mapping("opsd_de", taxonomy)
    assert classify("unobtainium", m, taxonomy, default="other_or_unspecified") == "other_or_unspecified"


def test_context_dependent_term(taxonomy):
    m = load_mapping("opsd_de", taxonomy)
    assert classify("Wasser", m, taxonomy, context="conventional") == "reservoir"
    assert classify("Wasser", m, taxonomy, context="renewable") == "run_of_river"
    # context-free entries serve every context
    assert classify("Erdgas", m, taxonomy, context="renewable") == "natural_gas"


def test_mapping_rejects_unknown_node(taxonomy):
    with pytest.raises(TaxonomyError):
        mapping_from_json({"id": "bad", "entries": [{"term": "x", "context": None, "node": "nope"}]}, taxonomy)


def test_mapping_rejects_conflict(taxonomy):
    entries = [{"term": "Gas", "context": None, "node": "natural_gas"},
               {"term": " gas", "context": None, "node": "biogas"}]
    with pytest.raises(TaxonomyError, match="conflict"):
        mapping_from_json({"id": "bad", "entries": entries}, taxonomy)


@pytest.mark.parametrize("ref", ["opsd_de", "entsoe"])
def test_every_shipped_entry_classifies(taxonomy, ref):
    m = load_mapping(ref, taxonomy)
    for (term, context), node in m.entries.items():
        assert classify(term, m, taxonomy, context=context) == node
        assert ancestors(node, taxonomy)[0] in ROOT_IDS


words = st.text(alphabet=st.sampled_from("aBcÄ \t\n"), max_size=12)


@given(words)
def test_normalization_idempotent(term):
    assert normalize_term(normalize_term(term)) == normalize_term(term)


@given(st.sampled_from(["Braunkohle", "Steinkohle", "Wind an Land", "Biogas"]), st.text(" \t", max_size=3),
       st.booleans())
def test_classify_ignores_case_and_padding(taxonomy, term, pad, upper):
    m = load_mapping("opsd_de", taxonomy)
    variant = pad + (term.upper() if upper else term) + pad
    assert classify(variant, m, taxonomy) == classify(term, m, taxonomy)
