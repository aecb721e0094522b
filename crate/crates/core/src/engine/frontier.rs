//! Commit-driven progress tracking across sources.

use thiserror::Error;

use crate::update::Epoch;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FrontierError {
    #[error("source {input} committed epoch {epoch} after epoch {last}")]
    NonMonotone { input: usize, epoch: Epoch, last: Epoch },
    #[error("source {input} committed epoch {epoch}, expected {expected}")]
    Skipped { input: usize, epoch: Epoch, expected: Epoch },
    #[error("source {0} already finished")]
    Finished(usize),
}

/// Per-source latest committed epoch. The global output epoch is the minimum
/// over sources that have not finished; once every source has finished, all
/// committed epochs close.
#[derive(Debug, Clone)]
pub struct Frontier {
    committed: Vec<Option<Epoch>>,
    finished: Vec<bool>,
    /// Number of globally closed epochs, i.e. epochs `0..closed` are closed.
    closed: Epoch,
}

impl Frontier {
    pub fn new(sources: usize) -> Self {
        Frontier {
            committed: vec![None; sources],
            finished: vec![false; sources],
            closed: 0,
        }
    }

    /// Epoch the next data record of `source` belongs to.
    pub fn open_epoch(&self, source: usize) -> Epoch {
        self.committed[source].map_or(0, |e| e + 1)
    }

    pub fn committed(&self, source: usize) -> Option<Epoch> {
        self.committed[source]
    }

    /// Latest globally closed epoch, if any.
    pub fn output_epoch(&self) -> Option<Epoch> {
        self.closed.checked_sub(1)
    }

    pub fn is_finished(&self, source: usize) -> bool {
        self.finished[source]
    }

    /// Records that `source` committed `epoch`; returns the epochs this closes.
    ///
    /// Commits must be consecutive: each source commits `0, 1, 2, ...`.
    pub fn advance(&mut self, source: usize, epoch: Epoch) -> Result<Vec<Epoch>, FrontierError> {
        if self.finished[source] {
            return Err(FrontierError::Finished(source));
        }
        if let Some(last) = self.committed[source] {
            if epoch <= last {
                return Err(FrontierError::NonMonotone { input: source, epoch, last });
            }
        }
        let expected = self.open_epoch(source);
        if epoch != expected {
            return Err(FrontierError::Skipped {
                input: source,
                epoch,
                expected,
            });
        }
        self.committed[source] = Some(epoch);
        Ok(self.close())
    }

    /// Marks `source` as ended; it no longer holds back the output epoch.
    pub fn finish(&mut self, source: usize) -> Vec<Epoch> {
        self.finished[source] = true;
        self.close()
    }

    fn close(&mut self) -> Vec<Epoch> {
        let active = self
            .committed
            .iter()
            .zip(&self.finished)
            .filter(|(_, f)| !**f)
            .map(|(c, _)| c.map_or(0, |e| e + 1))
            .min();
        let target = match active {
            Some(t) => t,
            None => self
                .committed
                .iter()
                .map(|c| c.map_or(0, |e| e + 1))
                .max()
                .unwrap_or(0),
        };
        let newly: Vec<Epoch> = (self.closed..target).collect();
        self.closed = self.closed.max(target);
        newly
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_sources_close_on_second_commit() {
        let mut f = Frontier::new(2);
        assert_eq!(f.advance(0, 0).unwrap(), Vec::<Epoch>::new());
        assert_eq!(f.advance(1, 0).unwrap(), vec![0]);
    }

    #[test]
    fn lagging_source_holds_back() {
        let mut f = Frontier::new(2);
        f.advance(0, 0).unwrap();
        f.advance(0, 1).unwrap();
        assert_eq!(f.advance(1, 0).unwrap(), vec![0]);
        assert_eq!(f.output_epoch(), Some(0));
        assert_eq!(f.advance(1, 1).unwrap(), vec![1]);
    }

    #[test]
    fn single_source_closes_immediately() {
        let mut f = Frontier::new(1);
        for e in 0..5 {
            assert_eq!(f.advance(0, e).unwrap(), vec![e]);
        }
    }

    #[test]
    fn non_monotone_commit_is_rejected() {
        let mut f = Frontier::new(1);
        f.advance(0, 0).unwrap();
        f.advance(0, 1).unwrap();
        assert_eq!(
            f.advance(0, 1).unwrap_err(),
            FrontierError::NonMonotone {
                input: 0,
                epoch: 1,
                last: 1
            }
        );
        assert!(matches!(f.advance(0, 5), Err(FrontierError::Skipped { .. })));
    }

    #[test]
    fn finishing_releases_held_epochs() {
        let mut f = Frontier::new(2);
        f.advance(0, 0).unwrap();
        f.advance(0, 1).unwrap();
        assert_eq!(f.finish(1), vec![0, 1]);
        assert_eq!(f.finish(0), Vec::<Epoch>::new());
    }

    #[test]
    fn output_epoch_is_monotone() {
        let mut f = Frontier::new(3);
        let mut last = None;
        let script = [(0, 0), (1, 0), (2, 0), (1, 1), (0, 1), (0, 2), (2, 1), (1, 2), (2, 2)];
        for (s, e) in script {
            f.advance(s, e).unwrap();
            assert!(f.output_epoch() >= last);
            last = f.output_epoch();
        }
        assert_eq!(last, Some(2));
    }
}
