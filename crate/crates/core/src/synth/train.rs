use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainKind {
    /// Two-axle freight wagons, coupled so that the axles of adjacent
    /// wagons form close pairs.
    Laagrss,
    /// Passenger cars on two-axle bogies.
    Alfa,
}

impl TrainKind {
    pub const ALL: [TrainKind; 2] = [TrainKind::Laagrss, TrainKind::Alfa];

    pub fn train_type(self) -> TrainType {
        TrainType::new(self)
    }

    /// Admissible operating speeds in km/h.
    pub fn speed_range_kmh(self) -> (f64, f64) {
        match self {
            TrainKind::Laagrss => (40.0, 120.0),
            TrainKind::Alfa => (40.0, 220.0),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            TrainKind::Laagrss => "laagrss",
            TrainKind::Alfa => "alfa",
        }
    }
}

impl std::str::FromStr for TrainKind {
    type Err = crate::Error;

    fn from_str(s: &str) -> crate::Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "laagrss" => Ok(TrainKind::Laagrss),
            "alfa" => Ok(TrainKind::Alfa),
            other => Err(crate::Error::config(format!("unknown train type `{other}`"))),
        }
    }
}

/// Axle layout and static mass of a train.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainType {
    pub kind: TrainKind,
    /// Axle positions in metres from the train head, strictly increasing.
    pub axle_positions: Vec<f64>,
    /// Wagon (car) index of each axle.
    pub axle_wagon: Vec<usize>,
    /// Position of each axle inside its wagon, counted from the front.
    pub axle_in_wagon: Vec<usize>,
    pub axles_per_wagon: usize,
    pub wagon_count: usize,
    pub expected_wheel_count: usize,
    pub expected_grouping: Vec<usize>,
    /// Empty mass of one wagon in tonnes.
    pub tare_per_wagon_t: f64,
    /// Distance from the last axle to the tail of the train, metres.
    pub tail_overhang_m: f64,
}

impl TrainType {
    pub fn new(kind: TrainKind) -> Self {
        match kind {
            TrainKind::Laagrss => {
                // 11.6 m wagons, 9.0 m wheelbase: the 2.6 m coupling gap pairs
                // the rear axle of one wagon with the front axle of the next.
                let wagons = 5;
                let (pitch, front, wheelbase) = (11.6, 1.3, 9.0);
                let mut axle_positions = Vec::new();
                let mut axle_wagon = Vec::new();
                let mut axle_in_wagon = Vec::new();
                for w in 0..wagons {
                    let base = w as f64 * pitch + front;
                    for (i, off) in [0.0, wheelbase].into_iter().enumerate() {
                        axle_positions.push(base + off);
                        axle_wagon.push(w);
                        axle_in_wagon.push(i);
                    }
                }
                TrainType {
                    kind,
                    axle_positions,
                    axle_wagon,
                    axle_in_wagon,
                    axles_per_wagon: 2,
                    wagon_count: wagons,
                    expected_wheel_count: 10,
                    expected_grouping: vec![1, 2, 2, 2, 2, 1],
                    tare_per_wagon_t: 13.0,
                    tail_overhang_m: 1.3,
                }
            }
            TrainKind::Alfa => {
                // 25 m cars, bogie pivots 16 m apart, 2.7 m bogie wheelbase.
                let cars = 4;
                let pitch = 25.0;
                let offsets = [3.15, 5.85, 19.15, 21.85];
                let mut axle_positions = Vec::new();
                let mut axle_wagon = Vec::new();
                let mut axle_in_wagon = Vec::new();
                for c in 0..cars {
                    for (i, off) in offsets.iter().enumerate() {
                        axle_positions.push(c as f64 * pitch + off);
                        axle_wagon.push(c);
                        axle_in_wagon.push(i);
                    }
                }
                TrainType {
                    kind,
                    axle_positions,
                    axle_wagon,
                    axle_in_wagon,
                    axles_per_wagon: 4,
                    wagon_count: cars,
                    expected_wheel_count: 16,
                    expected_grouping: vec![2; 8],
                    tare_per_wagon_t: 40.0,
                    tail_overhang_m: 3.15,
                }
            }
        }
    }

    pub fn length_m(&self) -> f64 {
        self.axle_positions.last().copied().unwrap_or(0.0) + self.tail_overhang_m
    }

    /// Smallest distance between consecutive axles.
    pub fn min_axle_gap_m(&self) -> f64 {
        self.axle_positions
            .windows(2)
            .map(|w| w[1] - w[0])
            .fold(f64::INFINITY, f64::min)
    }

    /// Global axle index for an axle position inside a wagon. Positions past
    /// the last axle of the wagon are clamped to it.
    pub fn axle_index(&self, wagon: usize, axle_in_wagon: usize) -> Option<usize> {
        if wagon >= self.wagon_count {
            return None;
        }
        Some(wagon * self.axles_per_wagon + axle_in_wagon.min(self.axles_per_wagon - 1))
    }

    /// Static load of every axle in tonnes. The front half of each wagon
    /// carries the first side of the load scheme, the rear half the second.
    pub fn axle_loads_t(&self, load: LoadScheme) -> Vec<f64> {
        let (front, rear) = load.per_side_load_t();
        let half = self.axles_per_wagon / 2;
        self.axle_in_wagon
            .iter()
            .map(|&i| {
                let side = if i < half { front } else { rear };
                self.tare_per_wagon_t / self.axles_per_wagon as f64 + side / half as f64
            })
            .collect()
    }

    /// True if the axle sits in the front (first-side) half of its wagon.
    pub fn is_front_half(&self, axle: usize) -> bool {
        self.axle_in_wagon[axle] < self.axles_per_wagon / 2
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LoadScheme {
    Empty,
    Half,
    Full,
    Unbalance1,
    Unbalance2,
    Unbalance3,
}

impl LoadScheme {
    pub const ALL: [LoadScheme; 6] = [
        LoadScheme::Empty,
        LoadScheme::Half,
        LoadScheme::Full,
        LoadScheme::Unbalance1,
        LoadScheme::Unbalance2,
        LoadScheme::Unbalance3,
    ];

    /// Payload on the (heavy, light) sides in tonnes.
    pub fn per_side_load_t(self) -> (f64, f64) {
        match self {
            LoadScheme::Empty => (0.0, 0.0),
            LoadScheme::Half => (7.5, 7.5),
            LoadScheme::Full => (15.0, 15.0),
            LoadScheme::Unbalance1 => (15.0, 7.5),
            LoadScheme::Unbalance2 => (15.0, 3.0),
            LoadScheme::Unbalance3 => (15.0, 0.0),
        }
    }

    pub fn total_load_t(self) -> f64 {
        let (a, b) = self.per_side_load_t();
        a + b
    }

    pub fn is_unbalanced(self) -> bool {
        let (a, b) = self.per_side_load_t();
        a != b
    }

    pub fn name(self) -> &'static str {
        match self {
            LoadScheme::Empty => "empty",
            LoadScheme::Half => "half",
            LoadScheme::Full => "full",
            LoadScheme::Unbalance1 => "unbalance1",
            LoadScheme::Unbalance2 => "unbalance2",
            LoadScheme::Unbalance3 => "unbalance3",
        }
    }
}

impl std::str::FromStr for LoadScheme {
    type Err = crate::Error;

    fn from_str(s: &str) -> crate::Result<Self> {
        LoadScheme::ALL
            .into_iter()
            .find(|l| l.name() == s.to_ascii_lowercase())
            .ok_or_else(|| crate::Error::config(format!("unknown load scheme `{s}`")))
    }
}
