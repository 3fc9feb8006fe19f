//! Uniform-grid cubic Hermite tables (C^1, slopes from finite differences).

#[derive(Clone, Debug)]
pub struct UniformTable {
    x0: f64,
    step: f64,
    values: Vec<f64>,
    slopes: Vec<f64>,
}

impl UniformTable {
    pub fn new(x0: f64, x1: f64, values: Vec<f64>) -> Self {
        let n = values.len();
        assert!(n >= 3 && x1 > x0, "table needs >= 3 nodes on a proper interval");
        let step = (x1 - x0) / (n - 1) as f64;
        let mut slopes = vec![0.0; n];
        for i in 1..n - 1 {
            slopes[i] = (values[i + 1] - values[i - 1]) / (2.0 * step);
        }
        slopes[0] = (-3.0 * values[0] + 4.0 * values[1] - values[2]) / (2.0 * step);
        slopes[n - 1] = (3.0 * values[n - 1] - 4.0 * values[n - 2] + values[n - 3]) / (2.0 * step);
        UniformTable { x0, step, values, slopes }
    }

    pub fn x_min(&self) -> f64 {
        self.x0
    }

    pub fn x_max(&self) -> f64 {
        self.x0 + self.step * (self.values.len() - 1) as f64
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Interpolated value; zero outside the tabulated interval.
    pub fn eval(&self, x: f64) -> f64 {
        let n = self.values.len();
        let s = (x - self.x0) / self.step;
        if !(0.0..=(n - 1) as f64).contains(&s) {
            return 0.0;
        }
        let i = (s.floor() as usize).min(n - 2);
        let t = s - i as f64;
        let (p0, p1) = (self.values[i], self.values[i + 1]);
        let (m0, m1) = (self.slopes[i] * self.step, self.slopes[i + 1] * self.step);
        let t2 = t * t;
        let t3 = t2 * t;
        (2.0 * t3 - 3.0 * t2 + 1.0) * p0
            + (t3 - 2.0 * t2 + t) * m0
            + (-2.0 * t3 + 3.0 * t2) * p1
            + (t3 - t2) * m1
    }

    /// Exact integral of the interpolant over the whole table.
    pub fn integral(&self) -> f64 {
        let h = self.step;
        (0..self.values.len() - 1)
            .map(|i| {
                h * (self.values[i] + self.values[i + 1]) / 2.0
                    + h * h * (self.slopes[i] - self.slopes[i + 1]) / 12.0
            })
            .sum()
    }

    pub fn scale(&mut self, c: f64) {
        self.values.iter_mut().for_each(|v| *v *= c);
        self.slopes.iter_mut().for_each(|v| *v *= c);
    }
}
