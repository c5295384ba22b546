from chaoslab.normalize import dedupe_preserve, tokens


def test_tokens():
    assert tokens("Rider-BFF /trip/request") == ["rider", "bff", "trip", "request"]
    assert tokens("promo_banner") == ["promo", "banner"]


def test_dedupe_preserve():
    assert dedupe_preserve(["trip", "core", "trip", "pricing"]) == ["trip", "core", "pricing"]


if __name__ == "__main__":
    test_tokens()
    test_dedupe_preserve()
    print("OK")
