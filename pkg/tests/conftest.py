import numpy as np
import pytest

from wals_typology.wals_schema import parse_wals

CATALOG = (
    "1A\tPhonology\tConsonant Inventories\tSmall | Average | Large\n"
    "81A\tWord Order\tOrder of Subject, Object and Verb\tSOV | SVO\n"
)

LANGUAGES = (
    "wals_code,iso_code,name,genus,family,macroarea,1A,81A\n"
    "eng,eng,English,Germanic,Indo-European,Eurasia,Average,SVO\n"
    "jpn,jpn,Japanese,Japanese,Japanese,Eurasia,Small,SOV\n"
    "xyz,,Nocode,Isolate,Isolate,Africa,Large,\n"
)


@pytest.fixture
def wals_inputs():
    return CATALOG.encode(), LANGUAGES.encode()


@pytest.fixture
def parsed(wals_inputs):
    return parse_wals(*wals_inputs)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
