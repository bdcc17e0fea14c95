"""A five-language, ten-feature fixture with hand-planted predictions."""

from wals_typology.wals_schema import FeatureCatalog, LanguageRecord, WalsFeature

CHAPTERS = ["Phonology", "Phonology", "Morphology", "Word Order", "Word Order",
            "Word Order", "Lexicon", "Lexicon", "Nominal Syntax", "Simple Clauses"]

CATALOG = FeatureCatalog(tuple(
    WalsFeature(f"{j + 1}A", f"Feature {j + 1}", str(j + 1), ch, ("x", "y", "z"))
    for j, ch in enumerate(CHAPTERS)))

FIDS = CATALOG.ids

LANGS = {
    "aaa": ("Alpha", "Eurasia"),
    "bbb": ("Alpha", "Africa"),
    "ccc": ("Beta", "Eurasia"),
    "ddd": ("Gamma", "South America"),
    "eee": ("Beta", "Papunesia"),
}

# gold[lang][feature] = value index; a missing feature is undefined for that language
GOLD = {
    "aaa": {"1A": 0, "2A": 1, "3A": 2, "4A": 0, "5A": 1, "6A": 0, "7A": 1, "8A": 2, "9A": 0, "10A": 1},
    "bbb": {"1A": 1, "3A": 0, "4A": 2, "6A": 1, "8A": 0, "10A": 2},
    "ccc": {"1A": 2, "2A": 2, "5A": 0, "7A": 0, "9A": 1},
    "ddd": {"2A": 0, "4A": 1, "6A": 2, "8A": 1, "10A": 0},
    "eee": {"1A": 0, "3A": 1, "5A": 2, "7A": 2, "9A": 2, "10A": 0},
}

# prediction[lang][feature] = value index; absent = abstention
PRED = {
    "aaa": {"1A": 0, "2A": 1, "3A": 0, "5A": 1, "6A": 1, "7A": 1, "9A": 0, "10A": 1},
    "bbb": {"1A": 1, "2A": 2, "3A": 0, "4A": 0, "8A": 0, "9A": 1},
    "ccc": {"1A": 2, "2A": 2, "5A": 1, "7A": 0, "8A": 0},
    "ddd": {"2A": 0, "4A": 1, "6A": 0, "10A": 0},
    "eee": {"1A": 1, "3A": 1, "5A": 2, "9A": 2, "10A": 2},
}

RECORDS = {code: LanguageRecord(f"w{code}", code, code.upper(), fam, f"G{fam}", area, GOLD[code])
           for code, (fam, area) in LANGS.items()}
