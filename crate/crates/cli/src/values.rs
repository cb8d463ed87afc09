//! Flag value types that round-trip through their `Display` form, so that a
//! manifest written from resolved values parses back to the same run.

use std::fmt;
use std::str::FromStr;

/// A list of sample points: `a:b:n` (linear), `a:b:n:log`, or `x1,x2,...`.
#[derive(Debug, Clone, PartialEq)]
pub enum Grid {
    Linear { start: f64, stop: f64, count: usize },
    Log { start: f64, stop: f64, count: usize },
    List(Vec<f64>),
}

impl Grid {
    pub fn points(&self) -> Vec<f64> {
        match *self {
            Grid::Linear { start, stop, count } => {
                if count == 1 {
                    return vec![start];
                }
                (0..count)
                    .map(|i| start + (stop - start) * i as f64 / (count - 1) as f64)
                    .collect()
            }
            Grid::Log { start, stop, count } => {
                if count == 1 {
                    return vec![start];
                }
                (0..count)
                    .map(|i| start * (stop / start).powf(i as f64 / (count - 1) as f64))
                    .collect()
            }
            Grid::List(ref v) => v.clone(),
        }
    }
}

impl FromStr for Grid {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let num = |t: &str| t.trim().parse::<f64>().map_err(|_| format!("bad number '{t}' in grid '{s}'"));
        if s.contains(':') {
            let parts: Vec<&str> = s.split(':').collect();
            let log = match parts.len() {
                3 => false,
                4 if parts[3].trim() == "log" => true,
                4 if parts[3].trim() == "lin" => false,
                _ => return Err(format!("grid '{s}' must look like start:stop:count[:log]")),
            };
            let (start, stop) = (num(parts[0])?, num(parts[1])?);
            let count: usize = parts[2]
                .trim()
                .parse()
                .map_err(|_| format!("bad count '{}' in grid '{s}'", parts[2]))?;
            if count == 0 {
                return Err(format!("grid '{s}' has no points"));
            }
            if !(start.is_finite() && stop.is_finite()) {
                return Err(format!("grid '{s}' has non-finite ends"));
            }
            if log {
                if !(start > 0.0 && stop > 0.0) {
                    return Err(format!("log grid '{s}' needs positive ends"));
                }
                Ok(Grid::Log { start, stop, count })
            } else {
                Ok(Grid::Linear { start, stop, count })
            }
        } else {
            let v = s.split(',').map(num).collect::<Result<Vec<_>, _>>()?;
            if v.is_empty() {
                return Err("empty grid".into());
            }
            Ok(Grid::List(v))
        }
    }
}

impl fmt::Display for Grid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Grid::Linear { start, stop, count } => write!(f, "{start}:{stop}:{count}"),
            Grid::Log { start, stop, count } => write!(f, "{start}:{stop}:{count}:log"),
            Grid::List(v) => {
                let s: Vec<String> = v.iter().map(|x| x.to_string()).collect();
                f.write_str(&s.join(","))
            }
        }
    }
}

/// Inclusive level range `a:b` (or a single level).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Levels {
    pub first: usize,
    pub last: usize,
}

impl FromStr for Levels {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let int = |t: &str| t.trim().parse::<usize>().map_err(|_| format!("bad level '{t}' in '{s}'"));
        let (first, last) = match s.split_once(':') {
            Some((a, b)) => (int(a)?, int(b)?),
            None => {
                let n = int(s)?;
                (n, n)
            }
        };
        if last < first {
            return Err(format!("level range '{s}' is empty"));
        }
        Ok(Levels { first, last })
    }
}

impl fmt::Display for Levels {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.first, self.last)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    It,
    Rt,
}

impl FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "it" | "imaginary" => Ok(Mode::It),
            "rt" | "real" => Ok(Mode::Rt),
            _ => Err(format!("mode must be 'it' or 'rt', got '{s}'")),
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::It => "it",
            Mode::Rt => "rt",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Figure {
    Fig3,
    Fig4,
    Fig5,
    Fig6,
    Fig7,
    All,
}

impl FromStr for Figure {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "fig3" => Ok(Figure::Fig3),
            "fig4" => Ok(Figure::Fig4),
            "fig5" => Ok(Figure::Fig5),
            "fig6" => Ok(Figure::Fig6),
            "fig7" => Ok(Figure::Fig7),
            "all" => Ok(Figure::All),
            _ => Err(format!("unknown figure '{s}' (fig3..fig7 or all)")),
        }
    }
}

impl fmt::Display for Figure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Figure::Fig3 => "fig3",
            Figure::Fig4 => "fig4",
            Figure::Fig5 => "fig5",
            Figure::Fig6 => "fig6",
            Figure::Fig7 => "fig7",
            Figure::All => "all",
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grids_round_trip() {
        for s in ["1:10:5", "0.001:0.01:4:log", "1,2.5,4"] {
            let g: Grid = s.parse().unwrap();
            assert_eq!(g.to_string(), s);
            assert_eq!(g.to_string().parse::<Grid>().unwrap(), g);
        }
        assert_eq!("1:3:3".parse::<Grid>().unwrap().points(), vec![1.0, 2.0, 3.0]);
        let p = "1:100:3:log".parse::<Grid>().unwrap().points();
        assert!((p[1] - 10.0).abs() < 1e-12);
        assert_eq!("2:5:1".parse::<Grid>().unwrap().points(), vec![2.0]);
    }

    #[test]
    fn bad_grids() {
        for s in ["1:2", "1:2:0", "a:2:3", "0:1:3:log", "1:2:3:cubic", ""] {
            assert!(s.parse::<Grid>().is_err(), "{s}");
        }
    }

    #[test]
    fn levels() {
        assert_eq!("0:4".parse::<Levels>().unwrap(), Levels { first: 0, last: 4 });
        assert_eq!("3".parse::<Levels>().unwrap().to_string(), "3:3");
        assert!("4:1".parse::<Levels>().is_err());
    }
}
