//! The MAIN story-structure scheme: 17 elements, their episode and category
//! structure, and presence scoring.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::de::Error as _;
use serde::ser::SerializeMap;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::chat::Story;

pub const ELEMENT_COUNT: usize = 17;

/// One of the 17 scoreable story-grammar elements, identified by its prompt
/// code `A0`..`A16`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ElementId(u8);

/// Story grammar category. Time and Location have one element each, the
/// other five one per episode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Category {
    Time,
    Location,
    InitiatingEvent,
    Goal,
    Attempt,
    Outcome,
    Reaction,
}

impl Category {
    pub const ALL: [Category; 7] = [
        Category::Time,
        Category::Location,
        Category::InitiatingEvent,
        Category::Goal,
        Category::Attempt,
        Category::Outcome,
        Category::Reaction,
    ];

    /// Label used in report tables.
    pub fn display_name(self) -> &'static str {
        match self {
            Category::Time => "Time",
            Category::Location => "Location",
            Category::InitiatingEvent => "IST as initiating event",
            Category::Goal => "Goal",
            Category::Attempt => "Attempt",
            Category::Outcome => "Outcome",
            Category::Reaction => "IST as reaction",
        }
    }

    pub fn elements(self) -> impl Iterator<Item = ElementId> {
        ElementId::all().filter(move |e| e.category() == self)
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.display_name())
    }
}

const LABELS: [&str; ELEMENT_COUNT] = [
    "T", "L", "I1", "G1", "A1", "O1", "R1", "I2", "G2", "A2", "O2", "R2", "I3", "G3", "A3", "O3",
    "R3",
];

impl ElementId {
    pub fn new(index: u8) -> Option<Self> {
        ((index as usize) < ELEMENT_COUNT).then_some(ElementId(index))
    }

    pub fn all() -> impl Iterator<Item = ElementId> + Clone {
        (0..ELEMENT_COUNT as u8).map(ElementId)
    }

    pub fn index(self) -> usize {
        self.0 as usize
    }

    /// Prompt code, `A0`..`A16`.
    pub fn code(self) -> String {
        format!("A{}", self.0)
    }

    /// Rubric abbreviation: `T`, `L`, `I1`, `G1`, ... `R3`.
    pub fn label(self) -> &'static str {
        LABELS[self.index()]
    }

    pub fn from_label(label: &str) -> Option<Self> {
        LABELS
            .iter()
            .position(|l| *l == label)
            .map(|i| ElementId(i as u8))
    }

    /// Episode number 1..=3, or `None` for the setting elements.
    pub fn episode(self) -> Option<u8> {
        match self.0 {
            0 | 1 => None,
            n => Some((n - 2) / 5 + 1),
        }
    }

    pub fn category(self) -> Category {
        match self.0 {
            0 => Category::Time,
            1 => Category::Location,
            n => match (n - 2) % 5 {
                0 => Category::InitiatingEvent,
                1 => Category::Goal,
                2 => Category::Attempt,
                3 => Category::Outcome,
                _ => Category::Reaction,
            },
        }
    }
}

impl fmt::Display for ElementId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "A{}", self.0)
    }
}

impl FromStr for ElementId {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let err = || format!("not an element code: {s:?}");
        let digits = s.strip_prefix('A').ok_or_else(err)?;
        if digits.is_empty()
            || digits.len() > 2
            || !digits.bytes().all(|b| b.is_ascii_digit())
            || (digits.len() > 1 && digits.starts_with('0'))
        {
            return Err(err());
        }
        digits.parse().ok().and_then(ElementId::new).ok_or_else(err)
    }
}

/// Utterance line numbers evidencing each of the 17 elements. An empty set
/// means the element is absent.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash)]
pub struct Positions([BTreeSet<u32>; ELEMENT_COUNT]);

impl Positions {
    pub fn empty() -> Self {
        Self::default()
    }

    pub fn get(&self, e: ElementId) -> &BTreeSet<u32> {
        &self.0[e.index()]
    }

    pub fn get_mut(&mut self, e: ElementId) -> &mut BTreeSet<u32> {
        &mut self.0[e.index()]
    }

    pub fn set(&mut self, e: ElementId, lines: impl IntoIterator<Item = u32>) {
        self.0[e.index()] = lines.into_iter().collect();
    }

    pub fn insert(&mut self, e: ElementId, line: u32) -> bool {
        self.0[e.index()].insert(line)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ElementId, &BTreeSet<u32>)> {
        ElementId::all().map(move |e| (e, self.get(e)))
    }

    pub fn is_present(&self, e: ElementId) -> bool {
        !self.get(e).is_empty()
    }

    pub fn present_count(&self) -> usize {
        self.0.iter().filter(|s| !s.is_empty()).count()
    }

    /// Elements tagged on each line, for lines carrying at least one tag.
    pub fn by_line(&self) -> BTreeMap<u32, Vec<ElementId>> {
        let mut out: BTreeMap<u32, Vec<ElementId>> = BTreeMap::new();
        for (e, lines) in self.iter() {
            for &l in lines {
                out.entry(l).or_default().push(e);
            }
        }
        out
    }

    /// Render in the prompt's position-dictionary notation,
    /// `{'A0': [1], 'A1': Null, ...}`.
    pub fn to_dict_string(&self) -> String {
        let body = self
            .iter()
            .map(|(e, lines)| {
                if lines.is_empty() {
                    format!("'{e}': Null")
                } else {
                    let list = lines
                        .iter()
                        .map(u32::to_string)
                        .collect::<Vec<_>>()
                        .join(", ");
                    format!("'{e}': [{list}]")
                }
            })
            .collect::<Vec<_>>()
            .join(", ");
        format!("{{{body}}}")
    }
}

impl Serialize for Positions {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        let mut map = serializer.serialize_map(Some(ELEMENT_COUNT))?;
        for (e, lines) in self.iter() {
            if lines.is_empty() {
                map.serialize_entry(&e.code(), &None::<Vec<u32>>)?;
            } else {
                map.serialize_entry(&e.code(), lines)?;
            }
        }
        map.end()
    }
}

impl<'de> Deserialize<'de> for Positions {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let raw: BTreeMap<String, Option<Vec<i64>>> = BTreeMap::deserialize(deserializer)?;
        let mut positions = Positions::empty();
        let mut seen = [false; ELEMENT_COUNT];
        for (key, value) in raw {
            let e: ElementId = key.parse().map_err(D::Error::custom)?;
            seen[e.index()] = true;
            for v in value.unwrap_or_default() {
                let line = u32::try_from(v)
                    .ok()
                    .filter(|&l| l >= 1)
                    .ok_or_else(|| D::Error::custom(format!("{e}: line number {v} is not >= 1")))?;
                positions.insert(e, line);
            }
        }
        let missing: Vec<String> = ElementId::all()
            .filter(|e| !seen[e.index()])
            .map(|e| e.code())
            .collect();
        if !missing.is_empty() {
            return Err(D::Error::custom(format!(
                "missing element keys: {}",
                missing.join(", ")
            )));
        }
        Ok(positions)
    }
}

/// One rater's annotation of one narrative. This is the on-disk annotation
/// file schema.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotationSet {
    pub narrative_id: String,
    pub rater_id: String,
    pub story: Story,
    pub positions: Positions,
}

impl AnnotationSet {
    pub fn new(narrative_id: impl Into<String>, rater_id: impl Into<String>, story: Story) -> Self {
        Self {
            narrative_id: narrative_id.into(),
            rater_id: rater_id.into(),
            story,
            positions: Positions::empty(),
        }
    }

    pub fn to_json_pretty(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("annotation serializes");
        s.push('\n');
        s
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PresenceVector {
    pub narrative_id: String,
    pub rater_id: String,
    pub present: [bool; ELEMENT_COUNT],
}

impl PresenceVector {
    pub fn is_present(&self, e: ElementId) -> bool {
        self.present[e.index()]
    }
}

pub fn to_presence(a: &AnnotationSet) -> PresenceVector {
    let mut present = [false; ELEMENT_COUNT];
    for e in ElementId::all() {
        present[e.index()] = a.positions.is_present(e);
    }
    PresenceVector {
        narrative_id: a.narrative_id.clone(),
        rater_id: a.rater_id.clone(),
        present,
    }
}

/// Number of present elements, 0..=17.
pub fn story_structure_score(p: &PresenceVector) -> u32 {
    p.present.iter().filter(|&&b| b).count() as u32
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ElementRow {
    pub element: ElementId,
    pub label: &'static str,
    pub episode: Option<u8>,
    pub category: Category,
    pub description: &'static str,
    pub exemplars: Vec<&'static str>,
}

impl Serialize for ElementId {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for ElementId {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        String::deserialize(deserializer)?
            .parse()
            .map_err(D::Error::custom)
    }
}

/// (description, Chinese keyword list separated by 、)
const DOG_ROWS: [(&str, &str); ELEMENT_COUNT] = [
    ("Time reference, e.g. once upon a time/ one day/ long ago...", "很久以前、有一天、从前"),
    (
        "Place reference, e.g. in a forest/ in a park/ in a meadow/ in a field/ by a tree/ near a tree/ by the road",
        "在森林里、在公园、在草地、在路边",
    ),
    ("Dog was playful/ curious; Dog saw a mouse", "狗在玩、狗很好奇、狗看到一只老鼠"),
    (
        "Dog wanted to catch/ get/ chase the mouse/ play with the mouse",
        "狗想抓老鼠、狗想得到老鼠、狗想追赶蝴蝶、狗想和老鼠一起玩、狗准备抓老鼠",
    ),
    ("Dog jumped forward/ up; Dog chased/ started to chase", "狗向前跳、狗向前扑过去"),
    (
        "Dog bumped his head/ bumped into the tree/ did not get the mouse/ was not quick enough; Mouse escaped/ ran behind the tree/ mouse was too quick",
        "狗撞到头、狗没有抓到老鼠、狗与老鼠一起玩、老鼠逃走了、老鼠跑到树后面、老鼠跑太快了",
    ),
    (
        "Dog was disappointed/ angry/ hurt; Mouse was happy/ glad/ relieved",
        "狗很难过、狗很生气、狗很受伤、老鼠很开心、老鼠很高兴",
    ),
    (
        "Boy was sad/ unhappy/ worried about his balloon; Boy saw the balloon in the tree",
        "男孩为他的气球而伤心、男孩为他的气球而难过、男孩为他的气球而担心、男孩看到他的气球在树上",
    ),
    (
        "Boy decided/ wanted to get his balloon back",
        "男孩决定找回他的气球、男孩想找回他的气球、准备去拿气球",
    ),
    (
        "Boy was/is pulling/ tried to pull the balloon down from the tree; Boy jumped after the balloon/ reached for (the balloon)/ was/is climbing (the tree)",
        "男孩尝试拉他的球、男孩跳上树去拉气球",
    ),
    ("Boy got his balloon back/ again; Balloon was saved", "男孩拿回了他的气球、男孩的气球得救了"),
    (
        "Boy was glad/ happy/ satisfied/ pleased/ relieved (to get/have his balloon back)",
        "男孩很开心、男孩很高兴、男孩很满足",
    ),
    (
        "Dog saw/ noticed the sausages (in the bag); Dog was hungry/ curious/ keen on the sausages",
        "狗注意到香肠、狗看见香肠、狗很饿、狗很好奇、狗看着香肠口水直流",
    ),
    (
        "Dog wanted/ decided to get/ grab/ eat/ have/ steal the sausages",
        "狗想去拿香肠、狗决定去拿香肠、狗想去吃香肠、狗决定去吃香肠、狗想去偷香肠、狗决定去偷香肠、狗准备去拿香肠",
    ),
    (
        "Dog was/is grabbing/pulling/ taking/ stealing the sausages; Dog grabs/pulls/takes the sausages (out of the bag)/ reached for the sausages",
        "狗去拿香肠、狗去接近香肠、狗去拿袋子、狗去接近袋子",
    ),
    ("Dog ate/ got the sausages", "狗吃到香肠、狗得到香肠"),
    (
        "Dog was satisfied/ glad/ pleased/ happy/ not hungry (anymore)",
        "狗很满足、狗很高兴、狗很饱",
    ),
];

const CAT_ROWS: [(&str, &str); ELEMENT_COUNT] = [
    ("once upon a time / one day / long ago", "很久以前、有一天、从前"),
    (
        "in the forest / by the lake / at the river bank / by the water / by the shore / in a meadow / in the bushes",
        "在森林里、在湖边、在河边、在草丛",
    ),
    ("cat was playful / curious; cat saw a butterfly", "猫在玩、猫很好奇、猫看到一只蝴蝶"),
    (
        "cat wanted to catch / get / chase the butterfly / play with the butterfly",
        "猫想抓蝴蝶、猫想得到蝴蝶、猫想追赶蝴蝶、猫想和蝴蝶一起玩、猫准备抓蝴蝶",
    ),
    (
        "cat jumped forward / up; cat chased / started to chase; cat tried to + VERB (catch, get, grab, take)",
        "猫向前跳、猫向前扑过去",
    ),
    (
        "cat fell into the bush / did not get the butterfly / was not quick enough; butterfly escaped / flew away / was too quick",
        "猫摔倒在小树里、猫没有抓到蝴蝶、猫与蝴蝶一起玩、蝴蝶逃走了、蝴蝶飞走了、蝴蝶飞太快了",
    ),
    (
        "cat was disappointed / angry / hurt; butterfly was happy / glad",
        "猫很难过、猫很生气、猫很受伤、蝴蝶很开心、蝴蝶很高兴",
    ),
    (
        "boy was sad / unhappy / worried about his ball; boy saw the ball in the water",
        "男孩为他的球而伤心、男孩为他的球而难过、男孩为他的球而担心、男孩看到他的球在水里",
    ),
    (
        "boy decided / wanted to get his ball back",
        "男孩决定找回他的球、男孩想找回他的球、我想要捡回我的球、他想捡球、他准备捡球",
    ),
    ("boy was/is pulling / tried to pull the ball out of the water", "男孩捞他的球"),
    ("boy got his ball back / again; the ball was saved", "男孩拿回了他的球、男孩的球得救了"),
    (
        "boy was glad / happy / pleased / satisfied / relieved (to get/have his ball back)",
        "男孩很开心、男孩很高兴、男孩很满足",
    ),
    (
        "cat was hungry / curious / keen on the fish; cat noticed / saw the fish",
        "猫注意到鱼、猫看见鱼、猫很饿、猫很好奇",
    ),
    (
        "cat wanted / decided to get / grab / eat / have / steal the fish",
        "猫想去拿鱼、猫决定去拿鱼、猫想去吃鱼、猫决定去吃鱼、猫想去偷鱼、猫决定去偷鱼、它想过去吃、它准备去吃鱼",
    ),
    (
        "cat was/is grabbing / pulling / taking / stealing the fish; cat grabs/pulls/takes the fish (out of the bucket) / reached for the fish; cat tried to + VERB (get, take)",
        "猫去拿鱼、猫去接近鱼、它就去拿了",
    ),
    ("cat ate / got the fish", "猫吃到鱼、猫得到鱼"),
    (
        "cat was satisfied / glad / pleased / happy / not hungry (any more)",
        "猫很满足、猫很高兴、猫很饱",
    ),
];

/// The 17 rubric rows for a story, with story-specific descriptions and
/// Chinese keyword exemplars.
pub fn element_table(story: Story) -> Vec<ElementRow> {
    let rows = match story {
        Story::Dog => &DOG_ROWS,
        Story::Cat => &CAT_ROWS,
    };
    ElementId::all()
        .map(|e| {
            let (description, keywords) = rows[e.index()];
            ElementRow {
                element: e,
                label: e.label(),
                episode: e.episode(),
                category: e.category(),
                description,
                exemplars: keywords.split('、').collect(),
            }
        })
        .collect()
}
