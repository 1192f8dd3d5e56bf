use crate::element::Element;
use crate::error::{Error, Result};
use crate::network::{Baseline, Mrn, MrnConfig, SegmentationModel};

pub type ModelBuilder<T> = fn(&MrnConfig, u64) -> Result<Box<dyn SegmentationModel<T>>>;

#[derive(Clone, Copy)]
pub struct ModelEntry<T: Element> {
    /// Identifier used on the command line and in checkpoints.
    pub name: &'static str,
    /// Display label for reports.
    pub label: &'static str,
    pub build: ModelBuilder<T>,
}

/// Name-keyed set of model constructors.
pub struct ModelRegistry<T: Element> {
    entries: Vec<ModelEntry<T>>,
}

fn build_mrn<T: Element>(cfg: &MrnConfig, seed: u64) -> Result<Box<dyn SegmentationModel<T>>> {
    Ok(Box::new(Mrn::<T>::new(cfg, seed)?))
}

fn build_baseline<T: Element>(cfg: &MrnConfig, seed: u64) -> Result<Box<dyn SegmentationModel<T>>> {
    Ok(Box::new(Baseline::<T>::new(cfg, seed)?))
}

impl<T: Element> ModelRegistry<T> {
    pub fn empty() -> Self {
        ModelRegistry { entries: Vec::new() }
    }

    /// Registry holding `ddsl` and `baseline`.
    pub fn standard() -> Self {
        let mut r = Self::empty();
        r.register(ModelEntry {
            name: "ddsl",
            label: "DDSL",
            build: build_mrn::<T>,
        });
        r.register(ModelEntry {
            name: "baseline",
            label: "FCN",
            build: build_baseline::<T>,
        });
        r
    }

    /// Adds or replaces an entry.
    pub fn register(&mut self, entry: ModelEntry<T>) {
        match self.entries.iter_mut().find(|e| e.name == entry.name) {
            Some(slot) => *slot = entry,
            None => self.entries.push(entry),
        }
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.entries.iter().map(|e| e.name).collect()
    }

    pub fn get(&self, name: &str) -> Result<&ModelEntry<T>> {
        self.entries.iter().find(|e| e.name == name).ok_or_else(|| {
            Error::Config(format!(
                "unknown model '{name}', expected one of: {}",
                self.names().join(", ")
            ))
        })
    }

    pub fn build(&self, name: &str, cfg: &MrnConfig, seed: u64) -> Result<Box<dyn SegmentationModel<T>>> {
        (self.get(name)?.build)(cfg, seed)
    }

    pub fn label(&self, name: &str) -> Result<&'static str> {
        Ok(self.get(name)?.label)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn standard_names() {
        let r = ModelRegistry::<f32>::standard();
        assert_eq!(r.names(), ["ddsl", "baseline"]);
        assert_eq!(r.label("baseline").unwrap(), "FCN");
        let err = r.build("unet", &MrnConfig::default(), 0).err().unwrap();
        assert!(err.to_string().contains("ddsl, baseline"));
    }

    #[test]
    fn built_kind_matches_name() {
        let r = ModelRegistry::<f32>::standard();
        let cfg = MrnConfig {
            depth: 1,
            base_channels: 2,
            descriptors: 2,
            side: 8,
            ..MrnConfig::default()
        };
        for name in r.names() {
            assert_eq!(r.build(name, &cfg, 1).unwrap().kind(), name);
        }
    }
}
