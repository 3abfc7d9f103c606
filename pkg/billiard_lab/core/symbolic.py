"""
Stories of reflections
Admissible words over {1..N}, primitive cyclic words and the decomposition J = rI + l
"""
from dataclasses import dataclass

from billiard_lab.config import ENUMERATION_BUDGET, logger
from billiard_lab.core.errors import EnumerationBudgetError, WordError


def serialize_word(word):
    return "-".join(str(j) for j in word)


def parse_word(text):
    try:
        word = tuple(int(part) for part in text.strip().split("-"))
    except ValueError:
        raise WordError(f"malformed word '{text}'")
    check_admissible(word)
    return word


def check_admissible(word, n=None, cyclic=False):
    word = tuple(word)
    if not word:
        raise WordError("empty word")
    if any(j < 1 or (n is not None and j > n) for j in word):
        raise WordError(f"letter out of range in {serialize_word(word)}")
    if any(a == b for a, b in zip(word, word[1:])):
        raise WordError(f"repeated consecutive letter in {serialize_word(word)}")
    if cyclic and (len(word) < 2 or word[0] == word[-1]):
        raise WordError(f"word {serialize_word(word)} is not cyclically admissible")
    return word


def minimal_rotation(word):
    """Lexicographically least rotation (Booth's algorithm)"""
    s = tuple(word) * 2
    n = len(word)
    failure = [-1] * len(s)
    k = 0
    for j in range(1, len(s)):
        c = s[j]
        i = failure[j - k - 1]
        while i != -1 and c != s[k + i + 1]:
            if c < s[k + i + 1]:
                k = j - i - 1
            i = failure[i]
        if c != s[k + i + 1]:
            if c < s[k]:
                k = j
            failure[j - k] = -1
        else:
            failure[j - k] = i + 1
    return tuple(s[k:k + n])


def minimal_period(word):
    """Smallest p with word[i] == word[i + p] for all valid i"""
    n = len(word)
    prefix = [0] * n
    for i in range(1, n):
        k = prefix[i - 1]
        while k and word[i] != word[k]:
            k = prefix[k - 1]
        if word[i] == word[k]:
            k += 1
        prefix[i] = k
    return n - prefix[-1] if n else 0


@dataclass(frozen=True)
class Story:
    word: tuple

    def __post_init__(self):
        object.__setattr__(self, "word", check_admissible(self.word))

    def __len__(self):
        return len(self.word)

    def __str__(self):
        return serialize_word(self.word)


@dataclass(frozen=True)
class PrimitiveStory:
    """A primitive cyclic word stored in its canonical rotation"""
    word: tuple

    def __post_init__(self):
        word = check_admissible(self.word, cyclic=True)
        if not is_primitive(word, cyclic=True):
            raise WordError(f"word {serialize_word(word)} is a repetition")
        object.__setattr__(self, "word", minimal_rotation(word))

    def __len__(self):
        return len(self.word)

    def __str__(self):
        return serialize_word(self.word)

    def reversed(self):
        return PrimitiveStory(self.word[::-1])


def reversal_key(word):
    """Canonical key shared by a cyclic word and its reversal"""
    return min(minimal_rotation(word), minimal_rotation(tuple(word)[::-1]))


# ============================================
# COUNTING
# ============================================
def count_admissible(n, k):
    """Exact (beta_k, |alpha_k|): words of length k and of length <= k (empty word included)"""
    if n < 2:
        raise WordError("need at least two letters")
    if k < 1:
        return (1 if k == 0 else 0), 1
    beta_k = n * (n - 1) ** (k - 1)
    if n == 2:
        alpha_k = 2 * k + 1
    else:
        alpha_k = n * ((n - 1) ** k - 1) // (n - 2) + 1
    return beta_k, alpha_k


def enumerate_admissible(n, k, budget=None):
    """Every admissible word of length 1..k, in length-then-lexicographic order"""
    if n < 2 or k < 1:
        raise WordError("need N >= 2 and k >= 1")
    budget = ENUMERATION_BUDGET if budget is None else budget
    _, total = count_admissible(n, k)
    if total - 1 > budget:
        logger.error(f"Enumeration of {total - 1} words exceeds the budget {budget}")
        raise EnumerationBudgetError("enumeration budget exceeded", words=total - 1, budget=budget)
    shell = [(j,) for j in range(1, n + 1)]
    for length in range(1, k + 1):
        yield from shell
        if length < k:
            shell = [w + (j,) for w in shell for j in range(1, n + 1) if j != w[-1]]


def enumerate_primitive_cyclic(n, k, budget=None):
    """Canonical primitive cyclic words of length 2..k, length-then-lexicographic"""
    for word in enumerate_admissible(n, k, budget):
        if len(word) < 2 or word[0] == word[-1]:
            continue
        if word == minimal_rotation(word) and minimal_period(word) == len(word):
            yield word


# ============================================
# PRIMITIVITY
# ============================================
def is_primitive(word, cyclic=False):
    word = tuple(word)
    if cyclic:
        check_admissible(word, cyclic=True)
    n = len(word)
    p = minimal_period(word)
    # a proper period only makes a repetition when it divides the length
    return not (p < n and n % p == 0)


@dataclass(frozen=True)
class Decomposition:
    """J = r I + l: r full copies of `root` followed by its first l letters"""
    root: tuple
    r: int
    l: int

    def reconstruct(self):
        return self.root * self.r + self.root[:self.l]

    @property
    def canonical(self):
        return minimal_rotation(self.root)


def primitive_decompose(word):
    """
    Split an admissible word into its primitive root aligned with the start.

    The root is the prefix of minimal period length, which gives the largest
    repetition count and the shortest root among all exact decompositions.
    A single letter is its own root.
    """
    word = check_admissible(word)
    p = minimal_period(word)
    return Decomposition(word[:p], len(word) // p, len(word) % p)
