use super::{GridState, SokobanError};

/// Parses one level in XSB notation. Short lines are padded with wall.
pub fn parse_level(text: &str) -> Result<GridState, SokobanError> {
    let mut lines: Vec<&str> = text.lines().map(|l| l.trim_end_matches('\r')).collect();
    while lines.last().is_some_and(|l| l.trim().is_empty()) {
        lines.pop();
    }
    let first = lines.iter().position(|l| !l.trim().is_empty()).unwrap_or(lines.len());
    lines.drain(..first);
    if lines.is_empty() {
        return Err(SokobanError::Parse("empty level".into()));
    }
    let height = lines.len();
    let width = lines.iter().map(|l| l.chars().count()).max().unwrap_or(0);
    let (mut walls, mut targets, mut boxes) = (Vec::new(), Vec::new(), Vec::new());
    let mut agent = None;
    for (r, line) in lines.iter().enumerate() {
        let chars: Vec<char> = line.chars().collect();
        for c in 0..width {
            let cell = r * width + c;
            match chars.get(c).copied().unwrap_or('#') {
                '#' => walls.push(cell),
                ' ' | '-' | '_' => {}
                '.' => targets.push(cell),
                '$' => boxes.push(cell),
                '*' => {
                    boxes.push(cell);
                    targets.push(cell);
                }
                '@' | '+' => {
                    if agent.replace((r, c)).is_some() {
                        return Err(SokobanError::Parse("more than one agent".into()));
                    }
                    if chars[c] == '+' {
                        targets.push(cell);
                    }
                }
                other => {
                    return Err(SokobanError::Parse(format!("unexpected character {other:?} at row {r}, column {c}")))
                }
            }
        }
    }
    let agent = agent.ok_or_else(|| SokobanError::Parse("no agent".into()))?;
    GridState::new(width, height, &walls, &targets, &boxes, agent)
}

/// Renders a state in XSB notation, one line per row, no trailing newline.
pub fn to_xsb(s: &GridState) -> String {
    let l = s.layout();
    let mut out = String::with_capacity(l.cells() + l.height());
    for r in 0..l.height() {
        if r > 0 {
            out.push('\n');
        }
        for c in 0..l.width() {
            let cell = r * l.width() + c;
            let ch = if l.is_wall(cell) {
                '#'
            } else {
                match (s.agent_cell() == cell, s.has_box(cell), l.is_target(cell)) {
                    (true, _, true) => '+',
                    (true, _, false) => '@',
                    (false, true, true) => '*',
                    (false, true, false) => '$',
                    (false, false, true) => '.',
                    (false, false, false) => ' ',
                }
            };
            out.push(ch);
        }
    }
    out
}

/// Splits a file of levels separated by blank lines. Lines starting with `;`
/// are comments.
pub fn parse_collection(text: &str) -> Result<Vec<GridState>, SokobanError> {
    let mut levels = Vec::new();
    let mut block = String::new();
    for line in text.lines().chain(std::iter::once("")) {
        let line = line.trim_end_matches('\r');
        if line.trim_start().starts_with(';') {
            continue;
        }
        if line.trim().is_empty() {
            if !block.is_empty() {
                levels.push(parse_level(&block)?);
                block.clear();
            }
        } else {
            block.push_str(line);
            block.push('\n');
        }
    }
    Ok(levels)
}

pub fn format_collection(levels: &[GridState]) -> String {
    let mut out = String::new();
    for (i, l) in levels.iter().enumerate() {
        if i > 0 {
            out.push('\n');
        }
        out.push_str(&to_xsb(l));
        out.push('\n');
    }
    out
}
