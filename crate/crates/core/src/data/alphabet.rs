use crate::nn::Tensor;

/// Token index into the 21-symbol alphabet (20 canonical residues + unknown).
pub type Token = u8;

/// Canonical residues in BLOSUM row order; index in this string is the token.
pub const CANONICAL: &[u8; 20] = b"ARNDCQEGHILKMFPSTWYV";
pub const NUM_CANONICAL: usize = 20;
pub const UNKNOWN: Token = 20;
pub const NUM_TOKENS: usize = 21;

/// Maps residue letters to tokens. Lookup is case-insensitive and every
/// non-canonical byte (X, B, Z, U, O, '*', ...) lands on [`UNKNOWN`].
#[derive(Clone, Debug)]
pub struct Alphabet {
    table: [Token; 256],
}

impl Default for Alphabet {
    fn default() -> Self {
        Alphabet::standard()
    }
}

impl Alphabet {
    pub fn standard() -> Self {
        let mut table = [UNKNOWN; 256];
        for (i, &c) in CANONICAL.iter().enumerate() {
            table[c as usize] = i as Token;
            table[c.to_ascii_lowercase() as usize] = i as Token;
        }
        Alphabet { table }
    }

    pub fn index(&self, residue: u8) -> Token {
        self.table[residue as usize]
    }

    pub fn encode(&self, residues: &str) -> Vec<Token> {
        residues.bytes().map(|b| self.index(b)).collect()
    }

    pub fn symbol(&self, token: Token) -> char {
        CANONICAL.get(token as usize).map_or('X', |&c| c as char)
    }

    pub fn decode(&self, tokens: &[Token]) -> String {
        tokens.iter().map(|&t| self.symbol(t)).collect()
    }
}

/// Convenience wrapper over the standard alphabet.
pub fn encode_sequence(residues: &str) -> Vec<Token> {
    Alphabet::standard().encode(residues)
}

/// `n × 21` one-hot matrix over the full token set.
pub fn one_hot(tokens: &[Token]) -> Tensor {
    let mut m = Tensor::zeros(&[tokens.len(), NUM_TOKENS]);
    for (i, &t) in tokens.iter().enumerate() {
        m.row_mut(i)[t as usize] = 1.0;
    }
    m
}
