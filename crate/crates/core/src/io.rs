//! Plain-text formats: tilings, tiling systems, grid samples, half-space
//! samples. Floats are written in shortest round-trip form.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::functions::{BoundaryFunction, GridFunction, SampledHalfSpace};
use crate::geometry::{DilationParam, Window};
use crate::tilings::{Color, LevelSchedule, Tiling, TilingSystem};

pub fn read_file(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|source| Error::Io { path: path.to_path_buf(), source })
}

/// Writes `contents`, creating parent directories.
pub fn write_file(path: &Path, contents: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|source| Error::Io { path: dir.to_path_buf(), source })?;
    }
    fs::write(path, contents).map_err(|source| Error::Io { path: path.to_path_buf(), source })
}

/// Non-empty, non-comment lines with their 1-based numbers.
struct Lines<'a> {
    inner: std::iter::Enumerate<std::str::Lines<'a>>,
    last: usize,
}

impl<'a> Lines<'a> {
    fn new(s: &'a str) -> Self {
        Lines { inner: s.lines().enumerate(), last: 0 }
    }

    fn next_line(&mut self) -> Option<(usize, &'a str)> {
        for (i, l) in self.inner.by_ref() {
            let l = l.trim();
            if !l.is_empty() && !l.starts_with('#') {
                self.last = i + 1;
                return Some((i + 1, l));
            }
        }
        None
    }

    fn expect(&mut self, what: &str) -> Result<(usize, &'a str)> {
        let at = self.last + 1;
        self.next_line().ok_or_else(|| Error::Parse { line: at, msg: format!("expected {what}, found end of input") })
    }
}

fn parse_num<T: std::str::FromStr>(tok: &str, line: usize, what: &str) -> Result<T> {
    tok.parse().map_err(|_| Error::Parse { line, msg: format!("bad {what} `{tok}`") })
}

fn fields(line: &str) -> Vec<&str> {
    line.split(|c: char| c.is_whitespace() || c == ',').filter(|s| !s.is_empty()).collect()
}

/// Header `n M d_max k0`, then `k m_1 .. m_n color` per cube.
pub fn write_tiling(t: &Tiling, lambda: DilationParam) -> String {
    let w = t.window();
    let mut out = format!("{} {} {} {}\n", w.dim(), w.period(), w.d_max(), lambda.k0);
    write_cubes(&mut out, t);
    out
}

fn write_cubes(out: &mut String, t: &Tiling) {
    for (q, c) in t.iter() {
        let _ = write!(out, "{}", q.level);
        for m in q.index() {
            let _ = write!(out, " {m}");
        }
        let _ = writeln!(out, " {}", c.as_str());
    }
}

fn parse_header(lines: &mut Lines) -> Result<(Window, DilationParam)> {
    let (ln, l) = lines.expect("header `n M d_max k0`")?;
    let f = fields(l);
    if f.len() != 4 {
        return Err(Error::Parse { line: ln, msg: "header must be `n M d_max k0`".into() });
    }
    let win = Window::new(parse_num(f[0], ln, "n")?, parse_num(f[1], ln, "M")?, parse_num(f[2], ln, "d_max")?)
        .map_err(|e| Error::Parse { line: ln, msg: e.to_string() })?;
    Ok((win, DilationParam::new(parse_num(f[3], ln, "k0")?)))
}

fn parse_cube_line(win: &Window, ln: usize, l: &str) -> Result<(crate::geometry::DyadicCube, Color)> {
    let n = win.dim();
    let f = fields(l);
    if f.len() != n + 2 {
        return Err(Error::Parse { line: ln, msg: format!("expected `k m_1..m_{n} color`, got {} fields", f.len()) });
    }
    let k: u32 = parse_num(f[0], ln, "level")?;
    if k > win.d_max() {
        return Err(Error::Parse { line: ln, msg: format!("level {k} exceeds d_max {}", win.d_max()) });
    }
    let idx = f[1..=n].iter().map(|s| parse_num::<i64>(s, ln, "index")).collect::<Result<Vec<_>>>()?;
    let per = win.cells_per_axis(k);
    if idx.iter().any(|&m| m < 0 || m >= per) {
        return Err(Error::Parse { line: ln, msg: format!("index {idx:?} outside the window at level {k}") });
    }
    let c = Color::parse(f[n + 1]).ok_or_else(|| Error::Parse { line: ln, msg: format!("bad color `{}`", f[n + 1]) })?;
    Ok((win.cube(k, &idx), c))
}

pub fn parse_tiling(s: &str) -> Result<(Tiling, DilationParam)> {
    let mut lines = Lines::new(s);
    let (win, lambda) = parse_header(&mut lines)?;
    let mut cubes = Vec::new();
    while let Some((ln, l)) = lines.next_line() {
        cubes.push(parse_cube_line(&win, ln, l)?);
    }
    Ok((Tiling::new(win, cubes), lambda))
}

fn join<T: ToString>(v: &[T]) -> String {
    v.iter().map(T::to_string).collect::<Vec<_>>().join(" ")
}

/// Tiling header, then `schedule`, `levels`, `params r q c1 c2 truncated
/// closing`, then one `stage <count>` block per stage.
pub fn write_system(sys: &TilingSystem) -> String {
    let w = sys.window;
    let mut out = format!("{} {} {} {}\n", w.dim(), w.period(), w.d_max(), sys.lambda.k0);
    let _ = writeln!(out, "schedule {}", join(&sys.schedule.levels));
    let _ = writeln!(out, "levels {}", join(&sys.stage_levels));
    let _ = writeln!(
        out,
        "params {} {:?} {:?} {:?} {} {}",
        sys.r, sys.q, sys.c1, sys.c2, sys.truncated as u8, sys.closing_stage as u8
    );
    for t in &sys.stages {
        let _ = writeln!(out, "stage {}", t.len());
        write_cubes(&mut out, t);
    }
    out
}

fn keyed<'a>(lines: &mut Lines<'a>, key: &str) -> Result<(usize, Vec<&'a str>)> {
    let (ln, l) = lines.expect(key)?;
    let f = fields(l);
    if f.first() != Some(&key) {
        return Err(Error::Parse { line: ln, msg: format!("expected `{key}` line") });
    }
    Ok((ln, f[1..].to_vec()))
}

pub fn parse_system(s: &str) -> Result<TilingSystem> {
    let mut lines = Lines::new(s);
    let (win, lambda) = parse_header(&mut lines)?;
    let (ln, sched) = keyed(&mut lines, "schedule")?;
    let sched = sched.iter().map(|t| parse_num(t, ln, "schedule level")).collect::<Result<Vec<u32>>>()?;
    let schedule =
        LevelSchedule::new(sched).map_err(|e| Error::Parse { line: ln, msg: e.to_string() })?;
    let (ln, lv) = keyed(&mut lines, "levels")?;
    let levels = lv.iter().map(|t| parse_num(t, ln, "stage level")).collect::<Result<Vec<u32>>>()?;
    let (ln, p) = keyed(&mut lines, "params")?;
    if p.len() != 6 {
        return Err(Error::Parse { line: ln, msg: "params must be `r q c1 c2 truncated closing`".into() });
    }
    let r: u32 = parse_num(p[0], ln, "r")?;
    let q: f64 = parse_num(p[1], ln, "q")?;
    let c1: f64 = parse_num(p[2], ln, "c1")?;
    let c2: f64 = parse_num(p[3], ln, "c2")?;
    let truncated = parse_num::<u8>(p[4], ln, "flag")? != 0;
    let closing = parse_num::<u8>(p[5], ln, "flag")? != 0;
    let mut stages = Vec::with_capacity(levels.len());
    for _ in 0..levels.len() {
        let (ln, c) = keyed(&mut lines, "stage")?;
        let count: usize = parse_num(c.first().copied().unwrap_or(""), ln, "stage size")?;
        let mut cubes = Vec::with_capacity(count);
        for _ in 0..count {
            let (ln, l) = lines.expect("cube record")?;
            cubes.push(parse_cube_line(&win, ln, l)?);
        }
        stages.push(Tiling::new(win, cubes));
    }
    if let Some((ln, _)) = lines.next_line() {
        return Err(Error::Parse { line: ln, msg: "trailing content after the last stage".into() });
    }
    let mut sys = TilingSystem::from_stages(&win, lambda, schedule, stages, levels);
    sys.r = r;
    sys.q = q;
    sys.c1 = c1;
    sys.c2 = c2;
    sys.truncated = truncated;
    sys.closing_stage = closing;
    Ok(sys)
}

/// Header `n M d`, then one sample per line in row-major cell order.
pub fn write_grid(phi: &GridFunction) -> String {
    let mut out = format!("{} {} {}\n", phi.dim(), phi.period(), phi.depth());
    for v in phi.values() {
        let _ = writeln!(out, "{v:?}");
    }
    out
}

pub fn parse_grid(s: &str) -> Result<GridFunction> {
    let mut lines = Lines::new(s);
    let (ln, l) = lines.expect("header `n M d`")?;
    let f = fields(l);
    if f.len() != 3 {
        return Err(Error::Parse { line: ln, msg: "header must be `n M d`".into() });
    }
    let (n, m, d): (usize, u32, u32) = (parse_num(f[0], ln, "n")?, parse_num(f[1], ln, "M")?, parse_num(f[2], ln, "d")?);
    let win = Window::new(n, m, d.max(1)).map_err(|e| Error::Parse { line: ln, msg: e.to_string() })?;
    let mut values = Vec::new();
    while let Some((ln, l)) = lines.next_line() {
        values.push(parse_num::<f64>(l, ln, "sample")?);
    }
    GridFunction::new(&win, d, values).map_err(|e| Error::Parse { line: ln, msg: e.to_string() })
}

/// Header `n M d d_t`, then one sample per line, `t` fastest.
pub fn write_half_space(f: &SampledHalfSpace) -> String {
    let mut out = format!("{} {} {} {}\n", f.n, f.period, f.depth, f.t_depth);
    for v in &f.values {
        let _ = writeln!(out, "{v:?}");
    }
    out
}

pub fn parse_half_space(s: &str) -> Result<SampledHalfSpace> {
    let mut lines = Lines::new(s);
    let (ln, l) = lines.expect("header `n M d d_t`")?;
    let f = fields(l);
    if f.len() != 4 {
        return Err(Error::Parse { line: ln, msg: "header must be `n M d d_t`".into() });
    }
    let n: usize = parse_num(f[0], ln, "n")?;
    let period: u32 = parse_num(f[1], ln, "M")?;
    let depth: u32 = parse_num(f[2], ln, "d")?;
    let t_depth: u32 = parse_num(f[3], ln, "d_t")?;
    Window::new(n, period, depth.max(1)).map_err(|e| Error::Parse { line: ln, msg: e.to_string() })?;
    let mut values = Vec::new();
    while let Some((ln, l)) = lines.next_line() {
        values.push(parse_num::<f64>(l, ln, "sample")?);
    }
    let want = (((period as usize) << depth).pow(n as u32)) * SampledHalfSpace::t_count(t_depth);
    if values.len() != want {
        return Err(Error::Parse { line: ln, msg: format!("expected {want} samples, got {}", values.len()) });
    }
    Ok(SampledHalfSpace { n, period, depth, t_depth, values })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::functions::FnHalfSpace;
    use crate::tilings::random_tiling;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn tiling_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for n in 1..=2 {
            let w = Window::new(n, 3, 4).unwrap();
            let t = random_tiling(&w, 4, 0.4, &mut rng);
            let s = write_tiling(&t, DilationParam::new(1));
            let (back, lam) = parse_tiling(&s).unwrap();
            assert_eq!(back, t);
            assert_eq!(lam.k0, 1);
            assert_eq!(write_tiling(&back, lam), s);
        }
    }

    #[test]
    fn tiling_parse_errors_carry_lines() {
        let err = parse_tiling("1 2 3 0\n0 0 yellow\n1 9 blue\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 3, .. }), "{err}");
        assert!(matches!(parse_tiling("1 2 3\n"), Err(Error::Parse { line: 1, .. })));
        assert!(matches!(parse_tiling("1 1 3 0\n0 0 green\n"), Err(Error::Parse { line: 2, .. })));
    }

    #[test]
    fn system_round_trip() {
        let w = Window::new(2, 1, 4).unwrap();
        let sys = TilingSystem::uniform(&w, &[0, 2, 3], DilationParam::unit()).with_constants(1.0 / 3.0 + 7.0, 5);
        let s = write_system(&sys);
        let back = parse_system(&s).unwrap();
        assert_eq!(back.stages, sys.stages);
        assert_eq!(back.selected, sys.selected);
        assert_eq!(back.c2.to_bits(), sys.c2.to_bits());
        assert_eq!(write_system(&back), s);
        assert!(parse_system(&format!("{s}0 0 0 blue\n")).is_err());
    }

    #[test]
    fn grid_and_half_space_round_trip() {
        let w = Window::new(2, 2, 3).unwrap();
        let g = GridFunction::from_fn(&w, 3, |x| (x[0] * 0.1).exp() - x[1] / 3.0);
        let back = parse_grid(&write_grid(&g)).unwrap();
        assert_eq!(back, g);
        assert!(parse_grid("2 2 3\n1.0\n").is_err());
        let f = FnHalfSpace::new(2, |x, t| x[0] * t + x[1]);
        let s = SampledHalfSpace::sample(&f, &w, 2, 2);
        let back = parse_half_space(&write_half_space(&s)).unwrap();
        assert_eq!(back, s);
    }
}
